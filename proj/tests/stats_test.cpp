#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "uatest/random.hpp"
#include "uatest/stats.hpp"

using namespace uatest;

namespace {

/// Two-group binary sample: group 0 succeeds with pa, group 1 with pb.
AssociationSample binary_sample(std::uint64_t seed, std::size_t n, double pa, double pb) {
    Rng rng(seed);
    std::bernoulli_distribution coin(0.5), a(pa), b(pb);
    AssociationSample s;
    s.s_levels = 2;
    s.o_levels = 2;
    s.s_labels = {"a", "b"};
    s.o_labels = {"no", "yes"};
    for (std::size_t i = 0; i < n; ++i) {
        const int g = coin(rng);
        s.s.push_back(g);
        s.o.push_back(g == 0 ? a(rng) : b(rng));
    }
    return s;
}

AssociationSample scalar_sample(std::uint64_t seed, std::size_t n, double slope) {
    Rng rng(seed);
    std::normal_distribution<double> g;
    AssociationSample s;
    for (std::size_t i = 0; i < n; ++i) {
        s.x.push_back(g(rng));
        s.y.push_back(slope * s.x.back() + g(rng));
    }
    return s;
}

const MetricSpec kDiff{MetricKind::Diff, std::nullopt, 1, 0, 1};

Statistic statistic(const MetricSpec& spec) {
    return [spec](const AssociationSample& s) { return try_estimate(spec, s); };
}

} // namespace

TEST_CASE("holm examples") {
    const std::vector<double> p{0.01, 0.02, 0.04};
    const auto adj = holm_bonferroni(p);
    CHECK(adj == std::vector<double>{0.03, 0.04, 0.04});
    CHECK(holm_bonferroni(std::vector<double>{0.2}) == std::vector<double>{0.2});
    CHECK(holm_bonferroni(std::vector<double>{0.1, 0.1, 0.1, 0.1}) == std::vector<double>(4, std::min(1.0, 4 * 0.1)));
    CHECK(holm_bonferroni(std::vector<double>{0.3, 0.3, 0.3, 0.3}) == std::vector<double>(4, 1.0));
    // Input order is preserved.
    CHECK(holm_bonferroni(std::vector<double>{0.04, 0.01, 0.02}) == std::vector<double>{0.04, 0.03, 0.04});
    CHECK(holm_bonferroni(std::vector<double>{}).empty());
    CHECK_THROWS_AS(holm_bonferroni(std::vector<double>{0.5, 1.5}), UsageError);
}

TEST_CASE("holm laws on random inputs") {
    Rng rng(4);
    std::uniform_real_distribution<double> u;
    std::uniform_int_distribution<int> size(1, 40);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> p(static_cast<std::size_t>(size(rng)));
        for (auto& v : p) v = u(rng) * u(rng);
        const auto adj = holm_bonferroni(p);
        for (std::size_t i = 0; i < p.size(); ++i) {
            CHECK(adj[i] >= p[i]);
            CHECK(adj[i] <= 1.0);
        }
        auto sorted = p;
        std::sort(sorted.begin(), sorted.end());
        const auto adj_sorted = holm_bonferroni(sorted);
        CHECK(std::is_sorted(adj_sorted.begin(), adj_sorted.end()));
    }
}

TEST_CASE("permutation p-value bounds and determinism") {
    const auto strong = binary_sample(1, 400, 0.9, 0.1);
    const double p = permutation_p(statistic(kDiff), strong, 1000, 7);
    CHECK(p == doctest::Approx(1.0 / 1001.0));
    CHECK(permutation_p(statistic(kDiff), strong, 1000, 7) == p);

    AssociationSample equal;
    equal.s_levels = equal.o_levels = 2;
    for (int i = 0; i < 200; ++i) {
        equal.s.push_back(i % 2);
        equal.o.push_back((i / 2) % 2);
    }
    CHECK(permutation_p(statistic(kDiff), equal, 1000, 3) > 0.9);
    CHECK_THROWS_AS(permutation_p(statistic(kDiff), equal, 50, 3), UsageError);
}

TEST_CASE("permutation p-values are approximately uniform under the null") {
    constexpr int runs = 200;
    const MetricSpec corr{MetricKind::Corr};
    std::vector<double> ps;
    for (int r = 0; r < runs; ++r)
        ps.push_back(permutation_p(statistic(corr), scalar_sample(derive_seed(99, static_cast<std::uint64_t>(r)), 60, 0.0),
                                   200, derive_seed(100, static_cast<std::uint64_t>(r))));
    std::sort(ps.begin(), ps.end());
    double ks = 0.0;
    for (int i = 0; i < runs; ++i) {
        const double f = ps[static_cast<std::size_t>(i)];
        ks = std::max({ks, std::abs(f - static_cast<double>(i) / runs), std::abs(f - static_cast<double>(i + 1) / runs)});
    }
    CHECK(ks < 0.1);
}

TEST_CASE("exact permutation p matches sampled permutation p") {
    const auto s = binary_sample(21, 300, 0.55, 0.45);
    const double exact = exact_permutation_p(kDiff, s.counts());
    const double sampled = permutation_p(statistic(kDiff), s, 20000, 5);
    CHECK(std::abs(exact - sampled) < 0.015);
}

TEST_CASE("bootstrap interval of a constant statistic collapses") {
    const auto s = scalar_sample(3, 50, 1.0);
    const Statistic mean_of_constant = [](const AssociationSample& x) -> std::optional<double> {
        double m = 0.0;
        for (std::size_t i = 0; i < x.x.size(); ++i) m += 4.25;
        return m / static_cast<double>(x.x.size());
    };
    const auto ci = bootstrap_ci(mean_of_constant, s, 200, 0.95, 1);
    CHECK(ci.lo == 4.25);
    CHECK(ci.hi == 4.25);
    CHECK_THROWS_AS(bootstrap_ci(mean_of_constant, s, 20, 0.95, 1), UsageError);
    const Statistic never = [](const AssociationSample&) -> std::optional<double> { return std::nullopt; };
    CHECK_THROWS_WITH_AS(bootstrap_ci(never, s, 200, 0.95, 1), doctest::Contains("unstable context"), MetricError);
}

TEST_CASE("bootstrap CI coverage of a known DIFF") {
    constexpr int draws = 500;
    const double truth = 0.6 - 0.45;
    int covered = 0;
    for (int d = 0; d < draws; ++d) {
        const auto s = binary_sample(derive_seed(2718, static_cast<std::uint64_t>(d)), 400, 0.6, 0.45);
        const auto ci = bootstrap_ci(statistic(kDiff), s, 1000, 0.95, derive_seed(3141, static_cast<std::uint64_t>(d)));
        if (ci.lo <= truth && truth <= ci.hi) ++covered;
    }
    const double coverage = static_cast<double>(covered) / draws;
    CHECK(coverage >= 0.93);
    CHECK(coverage <= 0.97);
}

TEST_CASE("bootstrap CI narrows with more data") {
    const auto small = bootstrap_ci(statistic(kDiff), binary_sample(8, 100, 0.6, 0.4), 500, 0.95, 1);
    const auto large = bootstrap_ci(statistic(kDiff), binary_sample(8, 10000, 0.6, 0.4), 500, 0.95, 1);
    CHECK(small.width() > large.width());
}

TEST_CASE("test_metric method routing and determinism") {
    StatConfig cfg;
    cfg.seed = 12;
    const auto small = test_metric(binary_sample(1, 800, 0.5, 0.4), kDiff, cfg);
    CHECK(small.method == TestMethod::Resampling);
    CHECK(small.ci.lo <= small.value.estimate);
    CHECK(small.value.estimate <= small.ci.hi);
    const auto large = test_metric(binary_sample(1, 5000, 0.5, 0.4), kDiff, cfg);
    CHECK(large.method == TestMethod::Asymptotic);
    CHECK(large.p_value < 1e-6);

    const MetricSpec nmi{MetricKind::Nmi};
    const auto a = test_metric(binary_sample(2, 600, 0.5, 0.5), nmi, cfg);
    const auto b = test_metric(binary_sample(2, 600, 0.5, 0.5), nmi, cfg);
    CHECK(a.p_value == b.p_value);
    CHECK(a.ci == b.ci);
    CHECK(a.ci.lo >= 0.0);

    const MetricSpec corr{MetricKind::Corr};
    const auto r = test_metric(scalar_sample(3, 3000, 0.3), corr, cfg);
    CHECK(r.method == TestMethod::Asymptotic);
    CHECK(r.ci.lo < r.value.estimate);
    CHECK(r.value.estimate < r.ci.hi);
    CHECK(r.p_value < 1e-10);

    StatConfig bad;
    bad.conf = 1.0;
    CHECK_THROWS_AS(test_metric(binary_sample(1, 50, 0.5, 0.5), kDiff, bad), UsageError);
}

TEST_CASE("Staples global table: G-test p-value is tiny") {
    AssociationSample s;
    s.s_levels = s.o_levels = 2;
    auto add = [&](int o, int g, int n) {
        for (int i = 0; i < n; ++i) {
            s.s.push_back(g);
            s.o.push_back(o);
        }
    };
    add(0, 0, 15301);
    add(0, 1, 13867);
    add(1, 0, 234167);
    add(1, 1, 231101);
    StatConfig cfg;
    cfg.bootstraps = 200;
    const auto t = test_metric(s, MetricSpec{MetricKind::Nmi}, cfg);
    CHECK(t.method == TestMethod::Asymptotic);
    // Independent evaluation: G = 2 N MI = 49.78 on one degree of freedom.
    CHECK(t.p_value < 1e-8);
    CHECK(t.p_value == doctest::Approx(1.72e-12).epsilon(0.01));
}

TEST_CASE("Berkeley Dept A table is significant") {
    AssociationSample s;
    s.s_levels = s.o_levels = 2;
    auto add = [&](int o, int g, int n) {
        for (int i = 0; i < n; ++i) {
            s.s.push_back(g);
            s.o.push_back(o);
        }
    };
    add(0, 0, 9);
    add(0, 1, 161);
    add(1, 0, 51);
    add(1, 1, 269);
    StatConfig cfg;
    const auto t = test_metric(s, kDiff, cfg);
    CHECK(std::abs(t.value.estimate - 0.2244) <= 1e-4);
    CHECK(t.p_value < 0.01);
    CHECK(t.ci.lo > 0.0);
}

TEST_CASE("corrected intervals") {
    StatConfig cfg;
    std::vector<TestedMetric> one{test_metric(binary_sample(5, 3000, 0.5, 0.45), kDiff, cfg)};
    const auto raw = one[0].ci;
    corrected_cis(one, 0.95);
    CHECK(one[0].corrected_ci == raw);

    std::vector<TestedMetric> family;
    for (std::uint64_t i = 0; i < 20; ++i) {
        cfg.seed = i;
        family.push_back(test_metric(binary_sample(100 + i, i % 2 ? 3000 : 600, 0.5, 0.45), kDiff, cfg));
    }
    apply_corrections(family, 0.95);
    for (const auto& t : family) {
        CHECK(t.corrected_ci.contains(t.ci));
        CHECK(t.corrected_p >= t.p_value);
        if (t.method == TestMethod::Asymptotic) {
            // Wald width scales with z(0.99875) / z(0.975).
            const double ratio = normal_two_sided_quantile(1.0 - 0.05 / 20) / normal_two_sided_quantile(0.95);
            CHECK(t.corrected_ci.width() / t.ci.width() == doctest::Approx(ratio).epsilon(1e-9));
            CHECK(ratio == doctest::Approx(3.0233 / 1.95996).epsilon(1e-4));
        }
    }
}

TEST_CASE("null calibration of raw and Holm-corrected p-values") {
    StatConfig cfg;
    int below = 0;
    for (std::uint64_t r = 0; r < 1000; ++r)
        if (test_metric(binary_sample(derive_seed(55, r), 2000, 0.3, 0.3), kDiff, cfg).p_value < 0.05) ++below;
    CHECK(below >= 30);
    CHECK(below <= 70);

    int family_errors = 0;
    for (std::uint64_t run = 0; run < 200; ++run) {
        std::vector<double> ps;
        for (std::uint64_t j = 0; j < 20; ++j)
            ps.push_back(test_metric(binary_sample(derive_seed(run + 1000, j), 1500, 0.4, 0.4), kDiff, cfg).p_value);
        const auto adj = holm_bonferroni(ps);
        if (std::any_of(adj.begin(), adj.end(), [](double p) { return p < 0.05; })) ++family_errors;
    }
    CHECK(family_errors <= 16);
}

TEST_CASE("asymptotic and permutation p-values agree on 2x2 tables") {
    StatConfig asym;
    asym.small_sample = 0;
    int agree = 0;
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
        const auto s = binary_sample(derive_seed(808, trial), 1000, 0.55, 0.45);
        const double pa = test_metric(s, kDiff, asym).p_value;
        const double pe = exact_permutation_p(kDiff, s.counts());
        if (pa <= 3.0 * pe && pe <= 3.0 * pa) ++agree;
    }
    CHECK(agree == 50);
}

TEST_CASE("z quantile helper") {
    CHECK(normal_two_sided_quantile(0.95) == doctest::Approx(1.959964).epsilon(1e-6));
    CHECK(normal_two_sided_quantile(0.9975) == doctest::Approx(3.023341).epsilon(1e-6));
}
