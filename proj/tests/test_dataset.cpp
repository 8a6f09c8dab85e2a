#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "featrec/dataset.hpp"
#include "featrec/simbench.hpp"
#include "support.hpp"

using namespace featrec;

namespace {

const char* ten_rows =
    "id,y,a,x1,x2\n"
    "p1,1.5,1,0.1,2\n"
    "p2,2.5,-1,0.2,1\n"
    "p3,0.5,1,0.3,4\n"
    "p4,1.0,-1,0.4,3\n"
    "p5,3.5,1,0.5,2\n"
    "p6,2.0,-1,0.6,5\n"
    "p7,1.0,1,0.7,1\n"
    "p8,4.0,-1,0.8,2\n"
    "p9,2.5,1,0.9,3\n"
    "p10,0.0,-1,1.0,4\n";

Dataset parse(const std::string& text, Schema schema = {}) {
    std::istringstream in(text);
    return dataset_from_table(parse_csv(in), schema);
}

} // namespace

TEST(LoadCsv, TenRowsTwoBalancedArms) {
    support::TempDir dir("dataset");
    support::write_text(dir.file("d.csv"), ten_rows);
    Schema schema;
    schema.id_col = "id";
    auto d = load_csv(dir.file("d.csv"), schema);
    EXPECT_EQ(d.n(), 10);
    EXPECT_EQ(d.p(), 2);
    EXPECT_EQ(d.labels().size(), 2u);
    EXPECT_EQ(d.column_names(), (std::vector<std::string>{"x1", "x2"}));
    EXPECT_EQ(d.ids().front(), "p1");
    EXPECT_DOUBLE_EQ(d.y()[2], 0.5);
    EXPECT_DOUBLE_EQ(d.x()(9, 0), 1.0);
    EXPECT_EQ(d.a()[1], Label(-1));
    EXPECT_EQ(d.row_of_id("p4"), 3);
}

TEST(LoadCsv, FourRowFileFailsArmMinimum) {
    const char* text = "y,a,x1,x2\n1,1,0.1,2\n2,-1,0.2,1\n3,1,0.3,4\n4,-1,0.4,3\n";
    EXPECT_THROW(parse(text), insufficient_data_error);
}

TEST(LoadCsv, ConstantColumnNamed) {
    std::string text = "y,a,x1,flat\n";
    for (int i = 0; i < 10; ++i) text += std::to_string(i) + "," + (i % 2 ? "1" : "-1") + "," + std::to_string(i * 0.1) + ",3\n";
    try {
        parse(text);
        FAIL() << "expected constant_column_error";
    } catch (const constant_column_error& e) {
        EXPECT_NE(std::string(e.what()).find("flat"), std::string::npos);
    }
}

TEST(LoadCsv, MissingColumnIsSchemaError) {
    Schema schema;
    schema.y_col = "response";
    EXPECT_THROW(parse(ten_rows, schema), schema_error);
    Schema s2;
    s2.x_cols = {"x1", "x9"};
    s2.id_col = "id";
    EXPECT_THROW(parse(ten_rows, s2), schema_error);
}

TEST(LoadCsv, NonNumericCellReportsRowAndColumn) {
    std::string text = ten_rows;
    text.replace(text.find("0.3,4"), 3, "abc");
    Schema schema;
    schema.id_col = "id";
    try {
        parse(text, schema);
        FAIL() << "expected parse_error";
    } catch (const parse_error& e) {
        EXPECT_EQ(e.column(), "x1");
        EXPECT_EQ(e.row(), 3u);
    }
}

TEST(LoadCsv, MissingCellRejected) {
    std::string text = ten_rows;
    text.replace(text.find("0.3,4"), 5, "0.3,");
    Schema schema;
    schema.id_col = "id";
    EXPECT_THROW(parse(text, schema), parse_error);
    std::string short_row = ten_rows;
    short_row.replace(short_row.find(",0.3,4"), 6, ",0.3");
    EXPECT_THROW(parse(short_row, schema), error);
}

TEST(LoadCsv, GlobAndListSelection) {
    Schema schema;
    schema.id_col = "id";
    schema.x_cols = {"x*"};
    EXPECT_EQ(parse(ten_rows, schema).p(), 2);
    schema.x_cols = {"x2"};
    auto d = parse(ten_rows, schema);
    ASSERT_EQ(d.p(), 1);
    EXPECT_EQ(d.column_names()[0], "x2");
}

TEST(LoadCsv, QuotedFieldsAndNamedArms) {
    std::string text = "y,\"arm\",x\n";
    for (int i = 0; i < 10; ++i) text += std::to_string(i) + "," + (i < 5 ? "\"dex, high\"" : "bortezomib") + "," + std::to_string(i * i) + "\n";
    Schema schema;
    schema.a_col = "arm";
    auto d = parse(text, schema);
    auto labels = d.labels();
    ASSERT_EQ(labels.size(), 2u);
    EXPECT_EQ(labels[0].str(), "bortezomib");
    EXPECT_EQ(labels[1].str(), "dex, high");
}

TEST(LoadCsv, RoundTripScenarioThree) {
    auto sim = generate(Scenario::make(3), 400, 8, 11);
    support::TempDir dir("dataset");
    write_csv(dir.file("s3.csv"), sim.data);
    Schema schema;
    schema.id_col = "id";
    auto back = load_csv(dir.file("s3.csv"), schema);
    ASSERT_EQ(back.n(), sim.data.n());
    ASSERT_EQ(back.p(), sim.data.p());
    EXPECT_LE((back.x() - sim.data.x()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((back.y() - sim.data.y()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(back.a(), sim.data.a());
    EXPECT_EQ(back.ids(), sim.data.ids());
    EXPECT_EQ(back.column_names(), sim.data.column_names());

    std::ostringstream first, second;
    write_csv(first, sim.data);
    write_csv(second, back);
    EXPECT_EQ(first.str(), second.str());
}

TEST(Dataset, RejectsSingleLabelAndNonFinite) {
    Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(10, 0, 9);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(10, 2);
    EXPECT_THROW(Dataset(y, std::vector<Label>(10, Label(1)), x, {"a", "b"}), insufficient_data_error);
    std::vector<Label> a;
    for (int i = 0; i < 10; ++i) a.emplace_back(i % 2);
    y[3] = std::nan("");
    EXPECT_THROW(Dataset(y, a, x, {"a", "b"}), invalid_argument);
}

TEST(SplitByArm, FourRowExampleShape) {
    // Same pattern as a = [1, -1, 1, -1], repeated so both arms meet the size minimum.
    std::vector<Label> a;
    for (int i = 0; i < 12; ++i) a.emplace_back(i % 2 == 0 ? 1 : -1);
    Dataset d(Eigen::VectorXd::LinSpaced(12, 0, 11), a, Eigen::MatrixXd::Random(12, 2), {"a", "b"});
    auto views = split_by_arm(d);
    ASSERT_EQ(views.size(), 2u);
    EXPECT_EQ(views[0].label, Label(-1));
    EXPECT_EQ(views[0].rows, (std::vector<Index>{1, 3, 5, 7, 9, 11}));
    EXPECT_EQ(views[1].rows, (std::vector<Index>{0, 2, 4, 6, 8, 10}));
}

TEST(SplitByArm, ScenarioOneHalves) {
    auto sim = generate(Scenario::make(1), 100, 8, 3);
    auto views = split_by_arm(sim.data);
    ASSERT_EQ(views.size(), 2u);
    EXPECT_EQ(views[0].n_a(), 50);
    EXPECT_EQ(views[1].n_a(), 50);
}

TEST(SplitByArm, PropertyPartition) {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 100; ++rep) {
        std::uniform_int_distribution<int> arms_dist(2, 5);
        const int arms = arms_dist(rng);
        const int n = arms * 5 + static_cast<int>(rng() % 40);
        std::vector<Label> a;
        for (int i = 0; i < n; ++i) a.emplace_back(i < arms * 5 ? i % arms : static_cast<int>(rng() % static_cast<unsigned>(arms)));
        std::shuffle(a.begin(), a.end(), rng);
        Eigen::MatrixXd x = Eigen::MatrixXd::Random(n, 3);
        Dataset d(Eigen::VectorXd::Random(n), a, x, {"a", "b", "c"});
        auto views = split_by_arm(d);
        ASSERT_EQ(static_cast<int>(views.size()), arms);
        std::vector<int> seen(static_cast<std::size_t>(n), 0);
        for (std::size_t v = 0; v < views.size(); ++v) {
            if (v > 0) EXPECT_LT(views[v - 1].label, views[v].label);
            for (auto r : views[v].rows) {
                ++seen[static_cast<std::size_t>(r)];
                EXPECT_EQ(d.a()[r], views[v].label);
            }
            EXPECT_TRUE(std::is_sorted(views[v].rows.begin(), views[v].rows.end()));
        }
        for (int s : seen) EXPECT_EQ(s, 1);

        auto prop = empirical_propensity(d);
        double total = 0.0;
        for (auto& [label, pr] : prop) {
            EXPECT_GE(pr, 5.0 / n);
            total += pr;
        }
        EXPECT_NEAR(total, 1.0, 1e-15);
    }
}

TEST(EmpiricalPropensity, Examples) {
    auto sim = generate(Scenario::make(2), 100, 4, 1);
    auto p = empirical_propensity(sim.data);
    EXPECT_EQ(p.at(Label(1)), 0.5);
    EXPECT_EQ(p.at(Label(-1)), 0.5);

    std::vector<Label> a;
    for (int i = 0; i < 477; ++i) a.emplace_back(i < 338 ? "bortezomib" : "dex");
    Dataset mm(Eigen::VectorXd::Random(477), a, Eigen::MatrixXd::Random(477, 2), {"g1", "g2"});
    auto pm = empirical_propensity(mm);
    EXPECT_EQ(pm.at(Label("bortezomib")), 338.0 / 477.0);
    EXPECT_EQ(pm.at(Label("dex")), 139.0 / 477.0);

    std::vector<Label> three;
    for (int i = 0; i < 100; ++i) three.emplace_back(i < 10 ? 0 : i < 30 ? 1 : 2);
    Dataset d3(Eigen::VectorXd::Random(100), three, Eigen::MatrixXd::Random(100, 2), {"u", "v"});
    auto p3 = empirical_propensity(d3);
    EXPECT_DOUBLE_EQ(p3.at(Label(0)), 0.1);
    EXPECT_DOUBLE_EQ(p3.at(Label(1)), 0.2);
    EXPECT_DOUBLE_EQ(p3.at(Label(2)), 0.7);
}

TEST(Label, NumericBeforeTextAndNumericOrder) {
    std::vector<Label> v{Label("b"), Label(10), Label("a"), Label(-1), Label(2), Label("1.5")};
    std::sort(v.begin(), v.end());
    std::vector<std::string> text;
    for (auto& l : v) text.push_back(l.str());
    EXPECT_EQ(text, (std::vector<std::string>{"-1", "1.5", "2", "10", "a", "b"}));
}

TEST(Dataset, SubsetsKeepIdsAndNames) {
    auto sim = generate(Scenario::make(3), 40, 6, 5);
    std::vector<Index> rows(30);
    std::iota(rows.begin(), rows.end(), 5);
    auto sub = sim.data.subset_rows(rows);
    EXPECT_EQ(sub.n(), 30);
    EXPECT_EQ(sub.ids().front(), "6");
    auto cols = sim.data.subset_columns({4, 1});
    EXPECT_EQ(cols.column_names(), (std::vector<std::string>{"x5", "x2"}));
    EXPECT_EQ(cols.x().col(0), sim.data.x().col(4));
}
