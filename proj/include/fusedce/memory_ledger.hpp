#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>

#include "fusedce/errors.hpp"

namespace fusedce {

// Byte-accounting for transient buffers. Operations charge what they
// allocate beyond inputs and outputs, and release it before returning, so
// current_bytes is back at its entry value when any public operation
// returns. peak_bytes records the high-water mark.
//
// Safe to share across concurrent workers. The peak is maintained with a
// compare-exchange max; it is exact once all workers have quiesced.
class MemoryLedger {
  public:
    void charge(std::size_t bytes) {
        if (bytes == 0) {
            return;
        }
        const std::int64_t now = current_.fetch_add(static_cast<std::int64_t>(bytes),
                                                    std::memory_order_relaxed) +
                                 static_cast<std::int64_t>(bytes);
        std::int64_t peak = peak_.load(std::memory_order_relaxed);
        while (peak < now && !peak_.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
        }
    }

    void release(std::size_t bytes) {
        if (bytes == 0) {
            return;
        }
        std::int64_t cur = current_.load(std::memory_order_relaxed);
        do {
            if (cur < static_cast<std::int64_t>(bytes)) {
                throw UnderflowRelease("ledger release of " + std::to_string(bytes) +
                                       " bytes exceeds current charge of " + std::to_string(cur));
            }
        } while (!current_.compare_exchange_weak(cur, cur - static_cast<std::int64_t>(bytes),
                                                 std::memory_order_relaxed));
    }

    std::size_t current_bytes() const noexcept {
        return static_cast<std::size_t>(current_.load(std::memory_order_relaxed));
    }

    std::size_t peak_bytes() const noexcept {
        return static_cast<std::size_t>(peak_.load(std::memory_order_relaxed));
    }

    void reset() noexcept {
        current_.store(0, std::memory_order_relaxed);
        peak_.store(0, std::memory_order_relaxed);
    }

  private:
    std::atomic<std::int64_t> current_{0};
    std::atomic<std::int64_t> peak_{0};
};

// RAII charge: releases on scope exit so transients stay balanced even on
// exceptional paths.
class ScopedCharge {
  public:
    ScopedCharge() = default;
    ScopedCharge(MemoryLedger& ledger, std::size_t bytes) : ledger_(&ledger), bytes_(bytes) {
        ledger_->charge(bytes_);
    }
    ScopedCharge(const ScopedCharge&) = delete;
    ScopedCharge& operator=(const ScopedCharge&) = delete;
    ScopedCharge(ScopedCharge&& other) noexcept : ledger_(other.ledger_), bytes_(other.bytes_) {
        other.ledger_ = nullptr;
        other.bytes_ = 0;
    }
    ScopedCharge& operator=(ScopedCharge&& other) noexcept {
        if (this != &other) {
            release_now();
            ledger_ = other.ledger_;
            bytes_ = other.bytes_;
            other.ledger_ = nullptr;
            other.bytes_ = 0;
        }
        return *this;
    }
    ~ScopedCharge() { release_now(); }

    void release_now() {
        if (ledger_ != nullptr && bytes_ > 0) {
            ledger_->release(bytes_);
        }
        ledger_ = nullptr;
        bytes_ = 0;
    }

  private:
    MemoryLedger* ledger_ = nullptr;
    std::size_t bytes_ = 0;
};

}  // namespace fusedce
