#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "featrec/evaluate.hpp"
#include "featrec/simbench.hpp"
#include "oracles.hpp"

using namespace featrec;

namespace {

std::vector<double> y_of(const Dataset& d) { return {d.y().data(), d.y().data() + d.n()}; }

std::vector<Label> random_rule(Index n, std::mt19937_64& rng) {
    std::vector<Label> rule;
    for (Index i = 0; i < n; ++i) rule.emplace_back(rng() % 2 == 0 ? 1 : -1);
    return rule;
}

} // namespace

TEST(EmpiricalValue, ObservedRuleIsMeanResponse) {
    auto sim = generate(Scenario::make(2), 200, 5, 1);
    auto v = empirical_value(sim.data, sim.data.a(), empirical_propensity(sim.data));
    EXPECT_NEAR(v.value, sim.data.y().mean(), 1e-12);
    EXPECT_EQ(v.n_matched, 200);
}

TEST(EmpiricalValue, MatchingOnlySevens) {
    Eigen::VectorXd y(20);
    std::vector<Label> a, rule;
    for (Index i = 0; i < 20; ++i) {
        a.emplace_back(i % 2);
        y[i] = i < 6 ? 7.0 : static_cast<double>(i);
        rule.emplace_back(i < 6 ? a.back() : Label(1 - static_cast<int>(i % 2)));
    }
    Dataset d(y, a, Eigen::MatrixXd::Random(20, 2), {"u", "v"});
    auto v = empirical_value(d, rule, empirical_propensity(d));
    EXPECT_DOUBLE_EQ(v.value, 7.0);
    EXPECT_EQ(v.n_matched, 6);
}

TEST(EmpiricalValue, MatchesDirectSummation) {
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 100; ++rep) {
        auto sim = generate(Scenario::make(1 + rep % 4), 50 + 7 * rep, 4, 100 + static_cast<std::uint64_t>(rep));
        auto rule = random_rule(sim.data.n(), rng);
        std::map<Label, double> prop{{Label(1), 0.3 + 0.004 * rep}, {Label(-1), 0.7 - 0.004 * rep}};
        const double want = oracle::ipw_value(y_of(sim.data), sim.data.a(), rule, prop);
        EXPECT_NEAR(empirical_value(sim.data, rule, prop).value, want, 1e-12);
    }
}

TEST(EmpiricalValue, UnnormalizedForm) {
    auto sim = generate(Scenario::make(3), 100, 4, 3);
    std::mt19937_64 rng(3);
    auto rule = random_rule(100, rng);
    auto prop = empirical_propensity(sim.data);
    double num = 0.0;
    for (Index i = 0; i < 100; ++i)
        if (rule[static_cast<std::size_t>(i)] == sim.data.a()[i]) num += sim.data.y()[i] / prop.at(sim.data.a()[i]);
    EXPECT_NEAR(empirical_value(sim.data, rule, prop, false).value, num / 100.0, 1e-12);
}

TEST(EmpiricalValue, NoOverlapIsUndefined) {
    auto sim = generate(Scenario::make(2), 40, 4, 4);
    std::vector<Label> opposite;
    for (const auto& a : sim.data.a()) opposite.emplace_back(a == Label(1) ? -1 : 1);
    EXPECT_THROW(empirical_value(sim.data, opposite, empirical_propensity(sim.data)), undefined_value_error);
    EXPECT_THROW(empirical_value(sim.data, std::vector<Label>(3, Label(1)), empirical_propensity(sim.data)),
                 invalid_argument);
}

TEST(EmpiricalValue, PermutationDuplicationAndAffineProperties) {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 30; ++rep) {
        auto sim = generate(Scenario::make(2 + rep % 3), 80, 4, 200 + static_cast<std::uint64_t>(rep));
        const Dataset& d = sim.data;
        auto rule = random_rule(d.n(), rng);
        auto prop = empirical_propensity(d);
        const double base = empirical_value(d, rule, prop).value;

        std::vector<Index> perm(static_cast<std::size_t>(d.n()));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<Label> rule_p;
        for (auto i : perm) rule_p.push_back(rule[static_cast<std::size_t>(i)]);
        EXPECT_NEAR(empirical_value(d.subset_rows(perm), rule_p, prop).value, base, 1e-12);

        std::vector<Index> twice(perm.size() * 2);
        for (std::size_t i = 0; i < twice.size(); ++i) twice[i] = static_cast<Index>(i % perm.size());
        std::vector<Label> rule2 = rule;
        rule2.insert(rule2.end(), rule.begin(), rule.end());
        EXPECT_NEAR(empirical_value(d.subset_rows(twice), rule2, prop).value, base, 1e-12);

        const double c = 2.5, shift = -4.0;
        Eigen::VectorXd scaled = (c * d.y().array()).matrix();
        Eigen::VectorXd shifted = (d.y().array() + shift).matrix();
        EXPECT_NEAR(empirical_value(d.with_response(scaled), rule, prop).value, c * base, 1e-12 * std::max(1.0, std::abs(c * base)));
        EXPECT_NEAR(empirical_value(d.with_response(shifted), rule, prop).value, base + shift, 1e-12 * std::max(1.0, std::abs(base)));
    }
}

TEST(Misclassification, OracleAndAntiOracle) {
    for (int s = 2; s <= 4; ++s) {
        auto sc = Scenario::make(s);
        std::mt19937_64 rng(static_cast<std::uint64_t>(s));
        Eigen::MatrixXd xs = draw_covariates(500, 6, rng);
        std::vector<Label> best, worst;
        for (Index i = 0; i < 500; ++i) {
            Label b = oracle_rule(sc.mean_function(), Scenario::labels(), xs.row(i).transpose());
            best.push_back(b);
            worst.emplace_back(b == Label(1) ? -1 : 1);
        }
        auto good = misclassification(sc.mean_function(), Scenario::labels(), best, xs);
        EXPECT_EQ(good.rate, 0.0);
        EXPECT_EQ(good.n, 500);
        auto bad = misclassification(sc.mean_function(), Scenario::labels(), worst, xs);
        EXPECT_EQ(bad.rate, 1.0);
        EXPECT_EQ(bad.misclassified, 500);
    }
}

TEST(Misclassification, ScenarioOneHandValues) {
    auto q0 = Scenario::make(1).mean_function();
    // L = 2 + 4(x1 + x2 + x3)
    Eigen::VectorXd half = Eigen::VectorXd::Zero(4);
    half[0] = -0.375; // L = 0.5
    EXPECT_EQ(oracle_rule(q0, Scenario::labels(), half), Label(1));
    EXPECT_DOUBLE_EQ(q0(half, Label(1)), 0.5);
    EXPECT_DOUBLE_EQ(q0(half, Label(-1)), 0.25);
    Eigen::VectorXd two = Eigen::VectorXd::Zero(4); // L = 2
    EXPECT_EQ(oracle_rule(q0, Scenario::labels(), two), Label(-1));
    EXPECT_DOUBLE_EQ(q0(two, Label(-1)), 4.0);
}

TEST(Misclassification, TiesCountAsCorrect) {
    // Scenario 1 ties where L = L^2, i.e. L = 1: x1 = -0.25
    auto q0 = Scenario::make(1).mean_function();
    Eigen::MatrixXd xs = Eigen::MatrixXd::Zero(2, 4);
    xs(0, 0) = -0.25;
    xs(1, 0) = -0.25;
    auto r = misclassification(q0, Scenario::labels(), {Label(1), Label(-1)}, xs);
    EXPECT_EQ(r.rate, 0.0);
    EXPECT_EQ(oracle_arms(q0, Scenario::labels(), xs.row(0).transpose()).size(), 2u);
}

TEST(ValueGap, ZeroForOracleAndNonNegative) {
    for (int s = 1; s <= 4; ++s) {
        auto sc = Scenario::make(s);
        std::mt19937_64 rng(10 + static_cast<std::uint64_t>(s));
        Eigen::MatrixXd xs = draw_covariates(2000, 5, rng);
        std::vector<Label> best, random;
        for (Index i = 0; i < xs.rows(); ++i) {
            best.push_back(oracle_rule(sc.mean_function(), Scenario::labels(), xs.row(i).transpose()));
            random.emplace_back(rng() % 2 ? 1 : -1);
        }
        EXPECT_EQ(value_gap(sc.mean_function(), Scenario::labels(), best, xs).gap, 0.0);
        auto g = value_gap(sc.mean_function(), Scenario::labels(), random, xs);
        EXPECT_GE(g.gap, -2.0 * g.standard_error);
    }
}

TEST(ValueGap, AntiOracleScenarioFourMatchesQuadrature) {
    auto sc = Scenario::make(4);
    std::mt19937_64 rng(12);
    Eigen::MatrixXd xs = draw_covariates(200000, 4, rng);
    std::vector<Label> anti;
    for (Index i = 0; i < xs.rows(); ++i)
        anti.emplace_back(oracle_rule(sc.mean_function(), Scenario::labels(), xs.row(i).transpose()) == Label(1) ? -1 : 1);
    auto g = value_gap(sc.mean_function(), Scenario::labels(), anti, xs);

    // 2 E|t0(X)| with x1, x2 ~ U[-1, 1]: nested Gauss-Kronrod on the unit square
    using boost::math::quadrature::gauss_kronrod;
    auto inner = [](double x1) {
        return gauss_kronrod<double, 61>::integrate(
            [x1](double x2) { return std::abs(3.8 * (0.8 - x1 * x1 - x2 * x2)); }, -1.0, 1.0, 15, 1e-12);
    };
    const double expected = 2.0 * gauss_kronrod<double, 61>::integrate(inner, -1.0, 1.0, 15, 1e-12) / 4.0;
    EXPECT_NEAR(g.gap, expected, 4.0 * g.standard_error);
    EXPECT_LT(g.standard_error, 0.01);
}
