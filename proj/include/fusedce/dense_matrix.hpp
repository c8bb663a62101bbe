#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "fusedce/bf16.hpp"
#include "fusedce/errors.hpp"

namespace fusedce {

// Element precision of a stored matrix. Bf16Emulated means every element
// is on the bfloat16 grid (see bf16.hpp) while still being stored in the
// compute type; accumulation never happens at bf16 precision.
enum class ElementPrecision { F32, F64, Bf16Emulated };

enum class ComputePrecision { F32, F64 };
enum class StoragePrecision { SameAsCompute, Bf16Emulated };

struct PrecisionMode {
    ComputePrecision compute = ComputePrecision::F32;
    StoragePrecision storage = StoragePrecision::SameAsCompute;
};

inline std::string precision_name(const PrecisionMode& mode) {
    if (mode.storage == StoragePrecision::Bf16Emulated) {
        return "bf16";
    }
    return mode.compute == ComputePrecision::F32 ? "f32" : "f64";
}

// Row-major 2-D array of real values. T is the compute type the elements
// are read at (float or double).
template <typename T>
class DenseMatrix {
    static_assert(std::is_floating_point_v<T>);

  public:
    DenseMatrix() = default;

    DenseMatrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, T{0}) {}

    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw DimensionMismatch("matrix data length " + std::to_string(data_.size()) +
                                    " does not match " + std::to_string(rows_) + "x" +
                                    std::to_string(cols_));
        }
    }

    static DenseMatrix zeros(std::size_t rows, std::size_t cols) { return DenseMatrix(rows, cols); }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t bytes() const noexcept { return data_.size() * sizeof(T); }

    ElementPrecision precision() const noexcept {
        if (bf16_storage_) {
            return ElementPrecision::Bf16Emulated;
        }
        return std::is_same_v<T, float> ? ElementPrecision::F32 : ElementPrecision::F64;
    }
    bool bf16_storage() const noexcept { return bf16_storage_; }

    T& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    T* row(std::size_t r) noexcept { return data_.data() + r * cols_; }
    const T* row(std::size_t r) const noexcept { return data_.data() + r * cols_; }
    std::span<const T> row_span(std::size_t r) const { return {row(r), cols_}; }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    // Rounds every element to the bf16 grid and tags the matrix. Re-rounding
    // an already-tagged matrix is a no-op.
    DenseMatrix& round_to_bf16() {
        for (T& x : data_) {
            x = static_cast<T>(round_bf16(x));
        }
        bf16_storage_ = true;
        return *this;
    }

    bool bf16_consistent() const {
        if (!bf16_storage_) {
            return true;
        }
        for (const T& x : data_) {
            if (static_cast<T>(round_bf16(x)) != x) {
                return false;
            }
        }
        return true;
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
    bool bf16_storage_ = false;
};

// Non-owning view over a contiguous row range of a matrix. Shards and
// kernels work on views so no code path has to copy slices.
template <typename T>
struct MatrixView {
    const T* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;

    MatrixView() = default;
    MatrixView(const T* d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {}
    MatrixView(const DenseMatrix<T>& m) : data(m.data()), rows(m.rows()), cols(m.cols()) {}

    const T* row(std::size_t r) const noexcept { return data + r * cols; }
    T at(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }

    MatrixView rows_slice(std::size_t lo, std::size_t hi) const {
        return MatrixView(data + lo * cols, hi - lo, cols);
    }
};

// Target token index per position, with an optional sentinel marking
// positions excluded from the loss (padding).
class TargetVector {
  public:
    TargetVector() = default;
    explicit TargetVector(std::vector<std::int64_t> targets,
                          std::optional<std::int64_t> ignore_index = std::nullopt)
        : targets_(std::move(targets)), ignore_index_(ignore_index) {}

    std::size_t size() const noexcept { return targets_.size(); }
    std::int64_t operator[](std::size_t n) const noexcept { return targets_[n]; }
    const std::vector<std::int64_t>& values() const noexcept { return targets_; }
    std::optional<std::int64_t> ignore_index() const noexcept { return ignore_index_; }

    bool is_ignored(std::size_t n) const noexcept {
        return ignore_index_.has_value() && targets_[n] == *ignore_index_;
    }

    std::size_t count_valid() const noexcept {
        if (!ignore_index_.has_value()) {
            return targets_.size();
        }
        std::size_t valid = 0;
        for (std::int64_t t : targets_) {
            valid += (t != *ignore_index_) ? 1u : 0u;
        }
        return valid;
    }

  private:
    std::vector<std::int64_t> targets_;
    std::optional<std::int64_t> ignore_index_;
};

struct ProblemDims {
    std::size_t n = 0;  // positions (B*T collapsed)
    std::size_t d = 0;  // hidden dimension
    std::size_t v = 0;  // vocabulary size
};

// Gradient pair every backward path returns: dL/dH is N x d, dL/dW is V x d.
template <typename T>
struct Gradients {
    DenseMatrix<T> hidden;
    DenseMatrix<T> weights;
};

// Checks that H is N x d, W is V x d, Y has length N and every non-ignored
// target lies in [0, V). All three dimensions must be nonzero.
template <typename T>
ProblemDims validate_problem(const MatrixView<T>& hidden, const MatrixView<T>& weights,
                             const TargetVector& targets) {
    if (hidden.rows == 0 || hidden.cols == 0 || weights.rows == 0) {
        throw EmptyInput("problem requires N > 0, d > 0, V > 0 (got N=" +
                         std::to_string(hidden.rows) + ", d=" + std::to_string(hidden.cols) +
                         ", V=" + std::to_string(weights.rows) + ")");
    }
    if (hidden.cols != weights.cols) {
        throw DimensionMismatch("hidden cols " + std::to_string(hidden.cols) +
                                " != weight cols " + std::to_string(weights.cols));
    }
    if (hidden.rows != targets.size()) {
        throw DimensionMismatch("hidden rows " + std::to_string(hidden.rows) +
                                " != target count " + std::to_string(targets.size()));
    }
    const std::size_t vocab = weights.rows;
    for (std::size_t n = 0; n < targets.size(); ++n) {
        if (targets.is_ignored(n)) {
            continue;
        }
        const std::int64_t t = targets[n];
        if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
            throw TargetOutOfRange("target " + std::to_string(t) + " at position " +
                                   std::to_string(n) + " outside [0, " + std::to_string(vocab) +
                                   ")");
        }
    }
    return ProblemDims{hidden.rows, hidden.cols, vocab};
}

}  // namespace fusedce
