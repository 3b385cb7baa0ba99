#include <doctest.h>

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "uatest/metrics.hpp"

using namespace uatest;

namespace {

ContingencyTable table2(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
    ContingencyTable t;
    t.counts.resize(2, 2);
    t.counts << a, b, c, d;
    t.output_labels = {"o1", "o2"};
    t.protected_labels = {"s1", "s2"};
    return t;
}

ContingencyTable random_table(std::mt19937_64& rng, int rows, int cols) {
    std::uniform_int_distribution<int> cell(0, 60);
    ContingencyTable t;
    t.counts.resize(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) t.counts(i, j) = cell(rng);
    return t;
}

/// Dataset with categorical columns given as parallel label vectors.
std::shared_ptr<const Dataset> categorical(const std::vector<std::pair<std::string, std::vector<std::string>>>& cols) {
    std::string text;
    for (std::size_t j = 0; j < cols.size(); ++j) text += (j ? "," : "") + cols[j].first;
    text += "\n";
    for (std::size_t r = 0; r < cols.front().second.size(); ++r) {
        for (std::size_t j = 0; j < cols.size(); ++j) text += (j ? "," : "") + cols[j].second[r];
        text += "\n";
    }
    SchemaHints hints;
    for (const auto& c : cols) hints.entries.push_back({c.first, {AttributeKind::Categorical, std::nullopt, {}}});
    return std::make_shared<const Dataset>(parse_csv(text, hints));
}

} // namespace

TEST_CASE("contingency counts cells; Berkeley Dept A layout") {
    std::vector<std::string> gender, admitted;
    auto add = [&](const char* g, const char* a, int n) {
        for (int i = 0; i < n; ++i) {
            gender.emplace_back(g);
            admitted.emplace_back(a);
        }
    };
    add("Female", "No", 9);
    add("Male", "No", 161);
    add("Female", "Yes", 51);
    add("Male", "Yes", 269);
    const auto d = categorical({{"gender", gender}, {"admitted", admitted}});
    const auto t = contingency(DatasetView(d), "gender", "admitted");
    CHECK(t.total() == 490);
    CHECK(t.output_labels == std::vector<std::string>{"No", "Yes"});
    CHECK(t.protected_labels == std::vector<std::string>{"Female", "Male"});
    CHECK(t.counts(0, 0) == 9);
    CHECK(t.counts(0, 1) == 161);
    CHECK(t.counts(1, 0) == 51);
    CHECK(t.counts(1, 1) == 269);

    // DIFF Pr(Yes|Female) - Pr(Yes|Male) = 51/60 - 269/430
    CHECK(std::abs(binary_difference(t, 1, 0, 1).estimate - 0.2244) <= 1e-4);
    CHECK(std::abs(binary_difference(t, 1, 0, 1).estimate - 0.2244186) < 1e-6);

    const auto empty = contingency(DatasetView(d, {}), "gender", "admitted");
    CHECK(empty.total() == 0);
    CHECK_THROWS_AS(mutual_information(empty, true), MetricError);
    const auto one = contingency(DatasetView(d, {0}), "gender", "admitted");
    CHECK(one.total() == 1);
    CHECK(one.counts(0, 0) == 1);
}

TEST_CASE("contingency rejects continuous attributes") {
    std::string text = "s,x\n";
    for (int i = 0; i < 20; ++i) text += fmt::format("{},{}\n", i % 2, i * 1.5);
    const auto d = std::make_shared<const Dataset>(parse_csv(text));
    CHECK_THROWS_AS(contingency(DatasetView(d), "s", "x"), DataError);
}

TEST_CASE("mutual information: dependence, independence, Staples global table") {
    const auto dep = table2(50, 0, 0, 50);
    CHECK(mutual_information(dep, false).estimate == doctest::Approx(std::log(2.0)));
    CHECK(mutual_information(dep, true).estimate == doctest::Approx(1.0));
    const auto indep = table2(25, 25, 25, 25);
    CHECK(mutual_information(indep, false).estimate == doctest::Approx(0.0));
    CHECK(mutual_information(indep, true).estimate == doctest::Approx(0.0));
    const auto staples = table2(15301, 13867, 234167, 231101);
    const double nmi = mutual_information(staples, true).estimate;
    CHECK(nmi >= 0.0001);
    CHECK(nmi <= 0.0005);
    CHECK_THROWS_WITH_AS(mutual_information(table2(10, 5, 0, 0), true), doctest::Contains("no variation"), MetricError);
}

TEST_CASE("MI properties on random tables") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        const auto t = random_table(rng, 2 + trial % 4, 2 + (trial / 4) % 4);
        const auto mi = try_mutual_information(t.counts, false);
        const auto nmi = try_mutual_information(t.counts, true);
        if (!mi) continue;
        CHECK(*mi >= 0.0);
        CHECK(*nmi >= 0.0);
        CHECK(*nmi <= 1.0);
        const auto mi_t = try_mutual_information(t.transposed().counts, false);
        CHECK(*mi_t == doctest::Approx(*mi).epsilon(1e-12));
    }
    // A function of the other variable with equal entropies: NMI = 1.
    ContingencyTable perm;
    perm.counts.resize(3, 3);
    perm.counts << 0, 30, 0, 0, 0, 30, 30, 0, 0;
    CHECK(*try_mutual_information(perm.counts, true) == doctest::Approx(1.0));
}

TEST_CASE("binary difference and ratio") {
    // Equal conditional proportions.
    CHECK(binary_difference(table2(10, 20, 30, 60), 0, 0, 1).estimate == doctest::Approx(0.0));
    CHECK(binary_difference(table2(10, 0, 0, 10), 0, 0, 1).estimate == doctest::Approx(1.0));
    CHECK_THROWS_WITH_AS(binary_difference(table2(3, 0, 4, 0), 0, 0, 1), "empty group column", MetricError);

    // Pr(o1|s1) = 0.4, Pr(o1|s2) = 0.2
    CHECK(binary_ratio(table2(4, 2, 6, 8), 0, 0, 1).estimate == doctest::Approx(1.0));
    CHECK(binary_ratio(table2(10, 20, 30, 60), 0, 0, 1).estimate == doctest::Approx(0.0));
    CHECK_THROWS_WITH_AS(binary_ratio(table2(4, 0, 6, 10), 0, 0, 1), doctest::Contains("undefined ratio"), MetricError);

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const auto t = random_table(rng, 2, 2);
        const auto ab = try_difference(t.counts, 0, 0, 1);
        const auto ba = try_difference(t.counts, 0, 1, 0);
        if (!ab) continue;
        CHECK(*ab == -*ba);
        CHECK(*ab >= -1.0);
        CHECK(*ab <= 1.0);
        if (auto r = try_ratio(t.counts, 0, 0, 1)) CHECK(*r >= -1.0);
    }
}

TEST_CASE("pearson correlation") {
    const std::vector<double> x{1, 2, 3};
    const std::vector<double> y{1, 2, 4};
    // Hand evaluation: sxy = 3, sxx = 2, syy = 14/3.
    CHECK(pearson_correlation(x, y).estimate == doctest::Approx(3.0 / std::sqrt(2.0 * 14.0 / 3.0)).epsilon(1e-12));
    CHECK(pearson_correlation(x, y).estimate == doctest::Approx(0.9820).epsilon(1e-4));
    const std::vector<double> z{4.5, -1.0, 7.25, 3.0};
    CHECK(pearson_correlation(z, z).estimate == doctest::Approx(1.0));
    const std::vector<double> c{2, 2, 2};
    CHECK_THROWS_WITH_AS(pearson_correlation(x, c), doctest::Contains("constant column"), MetricError);
    const std::vector<double> c2{0.1, 0.1, 0.1};
    CHECK_THROWS_AS(pearson_correlation(x, c2), MetricError);

    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a(50), b(50);
        for (int i = 0; i < 50; ++i) {
            a[static_cast<std::size_t>(i)] = g(rng);
            b[static_cast<std::size_t>(i)] = 0.5 * a[static_cast<std::size_t>(i)] + g(rng);
        }
        const double r = pearson_correlation(a, b).estimate;
        std::vector<double> a2(a), b2(b), neg(b);
        for (auto& v : a2) v = 3.5 * v - 20.0;
        for (auto& v : b2) v = 0.01 * v + 1e3;
        for (auto& v : neg) v = -v;
        CHECK(std::abs(pearson_correlation(a2, b2).estimate - r) < 1e-12);
        CHECK(std::abs(pearson_correlation(a, neg).estimate + r) < 1e-12);
    }
}

TEST_CASE("logistic label scores") {
    SUBCASE("perfect separation stays finite and ranks first") {
        std::mt19937_64 rng(1);
        std::bernoulli_distribution coin(0.5);
        const int n = 400, d = 4;
        Eigen::MatrixXd b(n, d);
        std::vector<std::int32_t> s(n);
        for (int i = 0; i < n; ++i) {
            s[static_cast<std::size_t>(i)] = coin(rng);
            b(i, 0) = coin(rng);
            b(i, 1) = s[static_cast<std::size_t>(i)];
            b(i, 2) = coin(rng);
            b(i, 3) = coin(rng);
        }
        const auto fit = logistic_label_scores(b, s, 1e-3, {"a", "sep", "c", "d"});
        CHECK(fit.coefficients.allFinite());
        CHECK(fit.std_errors.allFinite());
        CHECK(fit.ranking().front() == 1);
        CHECK(fit.iterations <= 100);
    }
    SUBCASE("balanced single label has a near-zero coefficient") {
        const int n = 10000;
        Eigen::MatrixXd b(n, 1);
        std::vector<std::int32_t> s(n);
        for (int i = 0; i < n; ++i) {
            s[static_cast<std::size_t>(i)] = i % 2;
            b(i, 0) = (i / 2) % 2;
        }
        const auto fit = logistic_label_scores(b, s);
        CHECK(std::abs(fit.coefficients(0)) < 0.1);
    }
    SUBCASE("independent labels score below 3 under the null") {
        std::mt19937_64 rng(2024);
        std::bernoulli_distribution coin(0.5), label(0.3);
        const int n = 5000, d = 10;
        int above = 0, total = 0;
        for (int trial = 0; trial < 10; ++trial) {
            Eigen::MatrixXd b(n, d);
            std::vector<std::int32_t> s(n);
            for (int i = 0; i < n; ++i) {
                s[static_cast<std::size_t>(i)] = coin(rng);
                for (int j = 0; j < d; ++j) b(i, j) = label(rng);
            }
            const auto sc = logistic_label_scores(b, s).scores();
            for (int j = 0; j < d; ++j) {
                ++total;
                if (sc(j) >= 3.0) ++above;
            }
        }
        CHECK(static_cast<double>(above) / total <= 0.01);
    }
    SUBCASE("errors") {
        Eigen::MatrixXd b = Eigen::MatrixXd::Ones(10, 1);
        std::vector<std::int32_t> same(10, 1);
        CHECK_THROWS_AS(logistic_label_scores(b, same), MetricError);
        std::vector<std::int32_t> three{0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
        CHECK_THROWS_AS(logistic_label_scores(b, three), MetricError);
    }
}

TEST_CASE("logistic scores are calibrated under shuffled protected labels") {
    // 100 seeded trials, 20 labels each; z(0.995) = 2.5758.
    std::mt19937_64 rng(77);
    std::bernoulli_distribution coin(0.5);
    std::uniform_real_distribution<double> freq(0.05, 0.5);
    const int n = 600, d = 20;
    int above = 0, total = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::MatrixXd b(n, d);
        std::vector<double> f(d);
        for (auto& v : f) v = freq(rng);
        std::vector<std::int32_t> s(n);
        for (int i = 0; i < n; ++i) {
            s[static_cast<std::size_t>(i)] = coin(rng);
            for (int j = 0; j < d; ++j) b(i, j) = std::bernoulli_distribution(f[static_cast<std::size_t>(j)])(rng);
        }
        const auto sc = logistic_label_scores(b, s).scores();
        for (int j = 0; j < d; ++j) {
            ++total;
            if (sc(j) > 2.5758) ++above;
        }
    }
    CHECK(static_cast<double>(above) / total <= 0.02);
}

TEST_CASE("label indicators parse ';' separated label sets") {
    const auto d = categorical({{"race", {"b", "w", "b", "w"}}, {"labels", {"cart;person", "person", "person;drum", "cart"}}});
    const auto li = label_indicators(DatasetView(d), "labels");
    CHECK(li.labels == std::vector<std::string>{"cart", "person", "drum"});
    CHECK(li.indicators.rows() == 4);
    CHECK(li.indicators(0, 0) == 1.0);
    CHECK(li.indicators(0, 1) == 1.0);
    CHECK(li.indicators(1, 0) == 0.0);
    CHECK(li.indicators(2, 2) == 1.0);
}

TEST_CASE("conditional metric") {
    std::mt19937_64 rng(9);
    std::bernoulli_distribution coin(0.5), skew(0.7);
    std::vector<std::string> s, o, e, constant;
    for (int i = 0; i < 600; ++i) {
        const bool g = coin(rng);
        s.push_back(g ? "m" : "f");
        o.push_back((g ? skew(rng) : coin(rng)) ? "yes" : "no");
        e.push_back(i % 3 == 0 ? "x" : "y");
        constant.push_back("k");
    }
    const auto d = categorical({{"s", s}, {"o", o}, {"e", e}, {"c", constant}});
    const DatasetView all(d);
    MetricSpec spec{MetricKind::Diff, std::nullopt, 1, 0, 1};
    const double plain = estimate(spec, make_sample(all, "s", "o", spec));
    const auto cond = conditional_metric(all, "s", "o", spec, "c");
    CHECK(cond.aggregate.estimate == plain);
    CHECK(cond.strata.size() == 1);
    MetricSpec nmi{MetricKind::Nmi};
    CHECK(conditional_metric(all, "s", "o", nmi, "c").aggregate.estimate == estimate(nmi, make_sample(all, "s", "o", nmi)));

    const auto two = conditional_metric(all, "s", "o", spec, "e");
    CHECK(two.strata.size() == 2);
    double weighted = 0.0;
    for (const auto& st : two.strata) weighted += static_cast<double>(st.size) / 600.0 * *st.value;
    CHECK(two.aggregate.estimate == doctest::Approx(weighted));

    // Two equal strata with DIFF +x and -x.
    std::vector<std::string> s2, o2, e2;
    auto add = [&](const char* g, const char* out, const char* stratum, int n) {
        for (int i = 0; i < n; ++i) {
            s2.emplace_back(g);
            o2.emplace_back(out);
            e2.emplace_back(stratum);
        }
    };
    add("a", "1", "p", 30);
    add("a", "0", "p", 20);
    add("b", "1", "p", 20);
    add("b", "0", "p", 30);
    add("a", "1", "q", 20);
    add("a", "0", "q", 30);
    add("b", "1", "q", 30);
    add("b", "0", "q", 20);
    const auto sym = categorical({{"s", s2}, {"o", o2}, {"e", e2}});
    MetricSpec diff{MetricKind::Diff, std::nullopt, 1, 0, 1};
    // Output categories appear as "1" first, so target "1" is position 0.
    diff.target = 0;
    const auto agg = conditional_metric(DatasetView(sym), "s", "o", diff, "e");
    CHECK(*agg.strata[0].value == doctest::Approx(0.2));
    CHECK(*agg.strata[1].value == doctest::Approx(-0.2));
    CHECK(agg.aggregate.estimate == doctest::Approx(0.0));

    CHECK_THROWS_AS(conditional_metric(DatasetView(sym), "s", "o", diff, "e", 101), MetricError);

    // Strata below the minimum size are flagged and excluded.
    const auto partial = conditional_metric(all, "s", "o", spec, "e", 300);
    const auto& small = partial.strata[0].label == "x" ? partial.strata[0] : partial.strata[1];
    const auto& big = partial.strata[0].label == "x" ? partial.strata[1] : partial.strata[0];
    CHECK(small.size == 200);
    CHECK_FALSE(small.included);
    CHECK(big.included);
    CHECK(partial.aggregate.estimate == doctest::Approx(*big.value));
}
