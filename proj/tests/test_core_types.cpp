#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <thread>
#include <vector>

#include "fusedce/bf16.hpp"
#include "fusedce/dense_matrix.hpp"
#include "fusedce/detail/kernels.hpp"
#include "fusedce/exec.hpp"
#include "fusedce/instance.hpp"
#include "fusedce/memory_ledger.hpp"
#include "fusedce/reduction.hpp"
#include "fusedce/softmax_stats.hpp"
#include "support/oracles.hpp"

using namespace fusedce;

TEST_CASE("bf16 rounding hits the documented examples") {
    CHECK(round_bf16(1.0f) == 1.0f);
    CHECK(round_bf16(-1.0f) == -1.0f);
    CHECK(round_bf16(0.0f) == 0.0f);

    // 1 + 2^-8 sits exactly between 1.0 and 1.0078125; the even mantissa wins.
    CHECK(round_bf16(1.00390625f) == 1.0f);
    // 1.0078125 + 2^-8 is also a tie, but now rounding to even goes up.
    CHECK(round_bf16(1.01171875f) == 1.015625f);

    // Just above / below the tie resolve by nearest.
    CHECK(round_bf16(std::nextafter(1.00390625f, 2.0f)) == 1.0078125f);
    CHECK(round_bf16(std::nextafter(1.00390625f, 0.0f)) == 1.0f);

    CHECK(round_bf16(10240.0f) == 10240.0f);  // 5 * 2^11, three significant bits
    CHECK(std::isnan(round_bf16(std::numeric_limits<float>::quiet_NaN())));
    CHECK(round_bf16(std::numeric_limits<float>::infinity()) ==
          std::numeric_limits<float>::infinity());
}

TEST_CASE("bf16 rounding is idempotent and matches the bit-level oracle") {
    std::uint64_t st = 7;
    for (int i = 0; i < 20000; ++i) {
        const float x = static_cast<float>((splitmix_unit(st) - 0.5) * 2000.0);
        const float r = round_bf16(x);
        CHECK(r == oracles::bf16_oracle(x));
        CHECK(round_bf16(r) == r);
        CHECK(is_bf16_value(r));
    }
    // Denormal-exponent region and negatives.
    for (int i = 0; i < 2000; ++i) {
        const float x = static_cast<float>((splitmix_unit(st) - 0.5) * 1e-30);
        CHECK(round_bf16(x) == oracles::bf16_oracle(x));
    }
}

TEST_CASE("ledger charge/release example") {
    MemoryLedger ledger;
    ledger.charge(100);
    ledger.charge(50);
    CHECK(ledger.current_bytes() == 150);
    ledger.release(150);
    CHECK(ledger.current_bytes() == 0);
    CHECK(ledger.peak_bytes() == 150);

    ledger.reset();
    CHECK(ledger.current_bytes() == 0);
    CHECK(ledger.peak_bytes() == 0);
}

TEST_CASE("ledger rejects releasing more than charged") {
    MemoryLedger ledger;
    ledger.charge(10);
    CHECK_THROWS_AS(ledger.release(11), UnderflowRelease);
    CHECK(ledger.current_bytes() == 10);
}

TEST_CASE("scoped charge releases on exit, including exceptional exits") {
    MemoryLedger ledger;
    {
        ScopedCharge c(ledger, 64);
        CHECK(ledger.current_bytes() == 64);
    }
    CHECK(ledger.current_bytes() == 0);

    try {
        ScopedCharge c(ledger, 32);
        throw std::runtime_error("boom");
    } catch (const std::runtime_error&) {
    }
    CHECK(ledger.current_bytes() == 0);
    CHECK(ledger.peak_bytes() == 64);

    ScopedCharge moved_from(ledger, 16);
    ScopedCharge moved_to = std::move(moved_from);
    CHECK(ledger.current_bytes() == 16);
    moved_to.release_now();
    CHECK(ledger.current_bytes() == 0);
}

TEST_CASE("ledger stays consistent under concurrent workers") {
    MemoryLedger ledger;
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&ledger] {
            for (int i = 0; i < 1000; ++i) {
                ledger.charge(100);
                ledger.release(100);
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
    CHECK(ledger.current_bytes() == 0);
    CHECK(ledger.peak_bytes() >= 100);
    CHECK(ledger.peak_bytes() <= 400);
}

TEST_CASE("dense matrix basics") {
    DenseMatrix<float> m(2, 3);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m.size() == 6);
    CHECK(m.bytes() == 24);
    m.at(1, 2) = 5.0f;
    CHECK(m.row(1)[2] == 5.0f);
    CHECK(m.precision() == ElementPrecision::F32);

    DenseMatrix<double> d(1, 1);
    CHECK(d.precision() == ElementPrecision::F64);

    CHECK_THROWS_AS(DenseMatrix<float>(2, 2, std::vector<float>{1.0f, 2.0f, 3.0f}),
                    DimensionMismatch);
}

TEST_CASE("bf16 tagging rounds every element and stays consistent") {
    DenseMatrix<float> m(1, 3, {1.00390625f, 0.1f, -2.0f});
    m.round_to_bf16();
    CHECK(m.precision() == ElementPrecision::Bf16Emulated);
    CHECK(m.at(0, 0) == 1.0f);
    CHECK(m.at(0, 1) == oracles::bf16_oracle(0.1f));
    CHECK(m.at(0, 2) == -2.0f);
    CHECK(m.bf16_consistent());
    m.at(0, 1) = 0.1f;  // off the grid again
    CHECK_FALSE(m.bf16_consistent());
}

TEST_CASE("matrix views slice rows without copying") {
    DenseMatrix<float> m(4, 2, {0, 1, 2, 3, 4, 5, 6, 7});
    MatrixView<float> view(m);
    MatrixView<float> slice = view.rows_slice(1, 3);
    CHECK(slice.rows == 2);
    CHECK(slice.at(0, 0) == 2.0f);
    CHECK(slice.at(1, 1) == 5.0f);
    CHECK(slice.data == m.data() + 2);
}

TEST_CASE("target vector ignores and counts") {
    TargetVector y({3, -100, 1, -100}, -100);
    CHECK(y.size() == 4);
    CHECK(y.is_ignored(1));
    CHECK_FALSE(y.is_ignored(0));
    CHECK(y.count_valid() == 2);

    TargetVector plain({1, 2});
    CHECK_FALSE(plain.is_ignored(0));
    CHECK(plain.count_valid() == 2);
}

TEST_CASE("problem validation accepts good shapes and rejects bad ones") {
    DenseMatrix<float> h(2, 3);
    DenseMatrix<float> w(5, 3);
    const ProblemDims dims = validate_problem(MatrixView<float>(h), MatrixView<float>(w),
                                              TargetVector({0, 4}));
    CHECK(dims.n == 2);
    CHECK(dims.d == 3);
    CHECK(dims.v == 5);

    DenseMatrix<float> w_bad(5, 4);
    CHECK_THROWS_AS(validate_problem(MatrixView<float>(h), MatrixView<float>(w_bad),
                                     TargetVector({0, 4})),
                    DimensionMismatch);
    CHECK_THROWS_AS(validate_problem(MatrixView<float>(h), MatrixView<float>(w),
                                     TargetVector({0})),
                    DimensionMismatch);
    CHECK_THROWS_AS(validate_problem(MatrixView<float>(h), MatrixView<float>(w),
                                     TargetVector({0, 5})),
                    TargetOutOfRange);
    CHECK_THROWS_AS(validate_problem(MatrixView<float>(h), MatrixView<float>(w),
                                     TargetVector({0, -1})),
                    TargetOutOfRange);
    // The ignore sentinel is exempt from the range check.
    CHECK_NOTHROW(validate_problem(MatrixView<float>(h), MatrixView<float>(w),
                                   TargetVector({0, -100}, -100)));

    DenseMatrix<float> empty(0, 0);
    CHECK_THROWS_AS(validate_problem(MatrixView<float>(empty), MatrixView<float>(w),
                                     TargetVector(std::vector<std::int64_t>{})),
                    EmptyInput);
}

TEST_CASE("loss reduction modes") {
    const std::vector<double> losses{1.0, 0.0, 3.0};

    const auto none = reduce_losses(losses, ReductionMode::None, 2);
    CHECK(none.vector() == losses);

    const auto sum = reduce_losses(losses, ReductionMode::Sum, 2);
    CHECK(sum.scalar() == 4.0);

    // Ignored positions hold zeros; the mean divides by the valid count.
    const auto mean = reduce_losses(losses, ReductionMode::Mean, 2);
    CHECK(mean.scalar() == 2.0);

    const auto empty_mean = reduce_losses(std::vector<double>{0.0, 0.0}, ReductionMode::Mean, 0);
    CHECK(empty_mean.scalar() == 0.0);
}

TEST_CASE("upstream gradient kinds are checked against the reduction") {
    const auto scalar = UpstreamGradient<float>::make_scalar(2.0f);
    const auto vec = UpstreamGradient<float>::make_per_position({1.0f, 2.0f});

    CHECK_NOTHROW(check_upstream(scalar, ReductionMode::Mean, 2));
    CHECK_NOTHROW(check_upstream(scalar, ReductionMode::Sum, 2));
    CHECK_NOTHROW(check_upstream(vec, ReductionMode::None, 2));
    CHECK_THROWS_AS(check_upstream(vec, ReductionMode::Mean, 2), InconsistentUpstream);
    CHECK_THROWS_AS(check_upstream(scalar, ReductionMode::None, 2), InconsistentUpstream);
    CHECK_THROWS_AS(check_upstream(vec, ReductionMode::None, 3), InconsistentUpstream);
}

TEST_CASE("effective upstream folds the mean normalization") {
    CHECK(effective_scalar_upstream(3.0, ReductionMode::Sum, 4) == 3.0);
    CHECK(effective_scalar_upstream(3.0, ReductionMode::Mean, 4) == doctest::Approx(0.75));
    CHECK(effective_scalar_upstream(3.0, ReductionMode::Mean, 0) == 0.0);

    TargetVector y({1, -100, 0}, -100);
    const auto gamma = effective_upstream(UpstreamGradient<double>::make_scalar(1.0),
                                          ReductionMode::Mean, y);
    CHECK(gamma == std::vector<double>{0.5, 0.0, 0.5});

    const auto gamma_none = effective_upstream(
        UpstreamGradient<double>::make_per_position({2.0, 5.0, 7.0}), ReductionMode::None, y);
    CHECK(gamma_none == std::vector<double>{2.0, 0.0, 7.0});
}

TEST_CASE("ceil-first partitions") {
    const auto two = partition_ranges(7, 2);
    REQUIRE(two.size() == 2);
    CHECK(two[0] == std::pair<std::size_t, std::size_t>{0, 4});
    CHECK(two[1] == std::pair<std::size_t, std::size_t>{4, 7});

    const auto three = partition_ranges(5, 3);
    CHECK(three[0] == std::pair<std::size_t, std::size_t>{0, 2});
    CHECK(three[1] == std::pair<std::size_t, std::size_t>{2, 4});
    CHECK(three[2] == std::pair<std::size_t, std::size_t>{4, 5});

    const auto sparse = partition_ranges(2, 4);
    CHECK(sparse[0].second - sparse[0].first == 1);
    CHECK(sparse[1].second - sparse[1].first == 1);
    CHECK(sparse[2].second == sparse[2].first);

    CHECK_THROWS_AS(partition_ranges(5, 0), InvalidLayout);
}

TEST_CASE("for_each_range covers every index exactly once") {
    for (std::size_t workers : {1, 2, 3, 8}) {
        std::vector<int> hits(13, 0);
        for_each_range(13, workers, [&](std::size_t, std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                hits[i] += 1;  // ranges are disjoint, so no race
            }
        });
        for (int h : hits) {
            CHECK(h == 1);
        }
    }
}

TEST_CASE("streaming stats recurrence on the worked example") {
    SoftmaxStats<double> s;
    CHECK(s.empty());
    CHECK(s.m == -std::numeric_limits<double>::infinity());
    CHECK(s.a == 0.0);

    s.update(0.0);
    CHECK(s.m == 0.0);
    CHECK(s.a == 1.0);
    s.update(1.0);
    CHECK(s.m == 1.0);
    CHECK(s.a == doctest::Approx(1.3678794411714423).epsilon(1e-15));
    s.update(2.0);
    CHECK(s.m == 2.0);
    CHECK(s.a == doctest::Approx(1.503214724408055).epsilon(1e-14));
    CHECK(s.logsumexp() == doctest::Approx(2.4076059644443806).epsilon(1e-14));

    s.update_target(2.0);
    CHECK(s.target_found);
    CHECK(s.loss() == doctest::Approx(0.4076059644443806).epsilon(1e-13));
    CHECK_FALSE(s.empty());
}

TEST_CASE("streaming stats match a two-pass evaluation on random logits") {
    std::uint64_t st = 11;
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> z(1 + splitmix64(st) % 40);
        for (double& x : z) {
            x = (splitmix_unit(st) - 0.5) * 30.0;
        }
        SoftmaxStats<double> s;
        for (double x : z) {
            s.update(x);
        }
        long double m = z[0];
        for (double x : z) {
            m = std::max<long double>(m, x);
        }
        long double a = 0.0L;
        for (double x : z) {
            a += std::exp(static_cast<long double>(x) - m);
        }
        const double expect = static_cast<double>(m + std::log(a));
        CHECK(s.logsumexp() == doctest::Approx(expect).epsilon(1e-13));
    }
}

TEST_CASE("merging stats rescales onto the common maximum") {
    SoftmaxStats<double> s1;
    s1.m = 1.0;
    s1.a = 2.0;
    SoftmaxStats<double> s2;
    s2.m = 3.0;
    s2.a = 1.0;

    const auto merged = merge_stats(s1, s2);
    CHECK(merged.m == 3.0);
    CHECK(merged.a == doctest::Approx(1.2706705664732254).epsilon(1e-15));
    CHECK_FALSE(merged.target_found);
}

TEST_CASE("default stats are the merge identity, bitwise") {
    SoftmaxStats<double> s;
    s.update(0.25);
    s.update(-3.0);
    s.update_target(0.25);

    const SoftmaxStats<double> identity;
    for (const auto& merged : {merge_stats(identity, s), merge_stats(s, identity)}) {
        CHECK(merged.m == s.m);
        CHECK(merged.a == s.a);
        CHECK(merged.z_target == s.z_target);
        CHECK(merged.target_found == s.target_found);
    }

    // Identity-with-identity stays empty instead of producing NaN from
    // exp(-inf - -inf).
    const auto both = merge_stats(identity, identity);
    CHECK(both.empty());
    CHECK_FALSE(std::isnan(both.a));
}

TEST_CASE("merge order changes results only at rounding level") {
    std::uint64_t st = 23;
    std::vector<SoftmaxStats<double>> parts(6);
    for (auto& p : parts) {
        for (int i = 0; i < 5; ++i) {
            p.update((splitmix_unit(st) - 0.5) * 20.0);
        }
    }
    SoftmaxStats<double> fwd;
    for (const auto& p : parts) {
        fwd = merge_stats(fwd, p);
    }
    SoftmaxStats<double> rev;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        rev = merge_stats(rev, *it);
    }
    CHECK(fwd.logsumexp() == doctest::Approx(rev.logsumexp()).epsilon(1e-12));
}

TEST_CASE("merging two target claims is an error") {
    SoftmaxStats<float> s1;
    s1.update(1.0f);
    s1.update_target(1.0f);
    SoftmaxStats<float> s2;
    s2.update(2.0f);
    s2.update_target(2.0f);
    CHECK_THROWS_AS(merge_stats(s1, s2), DuplicateTarget);
}

TEST_CASE("dot kernel agrees with the long double oracle and is reproducible") {
    std::uint64_t st = 31;
    for (std::size_t n : {1, 7, 16, 64, 100, 257}) {
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = splitmix_unit(st) - 0.5;
            b[i] = splitmix_unit(st) - 0.5;
        }
        const double got = detail::dot(a.data(), b.data(), n, 64);
        long double expect = 0.0L;
        for (std::size_t i = 0; i < n; ++i) {
            expect += static_cast<long double>(a[i]) * static_cast<long double>(b[i]);
        }
        CHECK(got == doctest::Approx(static_cast<double>(expect)).epsilon(1e-13));
        CHECK(detail::dot(a.data(), b.data(), n, 64) == got);
    }
}

TEST_CASE("axpy accumulates in place") {
    std::vector<float> y{1.0f, 2.0f, 3.0f};
    const std::vector<float> x{10.0f, 20.0f, 30.0f};
    detail::axpy(0.5f, x.data(), y.data(), 3);
    CHECK(y == std::vector<float>{6.0f, 12.0f, 18.0f});
}

TEST_CASE("instance generation is deterministic and respects bounds") {
    const auto a = make_random_instance<float>(4, 8, 16, 42);
    const auto b = make_random_instance<float>(4, 8, 16, 42);
    CHECK(a.hidden.storage() == b.hidden.storage());
    CHECK(a.weights.storage() == b.weights.storage());
    CHECK(a.targets.values() == b.targets.values());

    const auto c = make_random_instance<float>(4, 8, 16, 43);
    CHECK(a.hidden.storage() != c.hidden.storage());

    const float bound = 1.0f / std::sqrt(8.0f);
    for (float x : a.hidden.storage()) {
        CHECK(std::fabs(x) <= bound);
    }
    for (std::int64_t t : a.targets.values()) {
        CHECK(t >= 0);
        CHECK(t < 16);
    }
    CHECK_THROWS_AS(make_random_instance<float>(0, 8, 16, 1), EmptyInput);

    const auto ig = make_random_instance_with_ignores<float>(64, 4, 8, 7, -100, 0.5);
    CHECK(ig.hidden.storage() == make_random_instance<float>(64, 4, 8, 7).hidden.storage());
    CHECK(ig.targets.count_valid() < 64);
    CHECK(ig.targets.count_valid() > 0);
    CHECK(ig.targets.ignore_index() == -100);
}
