#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "featrec/dataset.hpp"
#include "featrec/error.hpp"
#include "featrec/json_io.hpp"
#include "featrec/loess.hpp"
#include "featrec/parallel.hpp"
#include "featrec/screening.hpp"
#include "featrec/sir.hpp"

namespace featrec {

inline constexpr int model_schema_version = 1;

struct RecommenderConfig {
    int k = 1;
    SliceSpec slices{};
    double span = 0.75;
    int degree = 1;
    bool bandwidth_schedule = false; // fixed radius h = n^(-1/(k+3)) instead of span
    std::optional<ScreenMethod> screen;
    double fdr_q = 0.05;
    double loess_fraction = 0.05;
    std::uint64_t seed = 0;
};

struct ArmModel {
    Label label;
    SirFit sir;
    LoessModel loess;
};

/// Fitted rule d(x) = argmax_a g_a(B_a x).
struct Recommender {
    std::vector<ArmModel> arms; // ascending label order
    std::map<Label, double> propensity;
    std::vector<std::string> selected_columns;
    json provenance;

    Eigen::Index p() const { return static_cast<Eigen::Index>(selected_columns.size()); }
};

struct ArmPrediction {
    Label label;
    Eigen::VectorXd feature_score;
    double predicted_response = 0.0;
    bool clamped = false;
    bool degenerate = false;
};

struct Recommendation {
    std::vector<ArmPrediction> per_arm;
    Label best;
    double margin = 0.0;
};

inline json provenance_of(const RecommenderConfig& c) {
    json j;
    j["k"] = c.k;
    j["slice_mode"] = to_string(c.slices.mode);
    j["slice_count"] = c.slices.count;
    j["span"] = c.span;
    j["degree"] = c.degree;
    j["bandwidth_schedule"] = c.bandwidth_schedule;
    j["screen"] = c.screen ? to_string(*c.screen) : "none";
    j["fdr_q"] = c.fdr_q;
    j["loess_fraction"] = c.loess_fraction;
    j["seed"] = c.seed;
    return j;
}

/// Column subset used by the rule: all columns, or the screened set topped
/// up by score rank to at least k + 1 columns.
inline std::vector<Index> choose_columns(const Dataset& d, const RecommenderConfig& config,
                                         std::optional<ScreenResult>* screen_out = nullptr) {
    std::vector<Index> cols(static_cast<std::size_t>(d.p()));
    std::iota(cols.begin(), cols.end(), 0);
    if (!config.screen) return cols;

    ScreenResult sr = *config.screen == ScreenMethod::fdr ? bh_select(marginal_pvalues(d).pvalues, config.fdr_q)
                                                          : loess_screen(d, config.loess_fraction);
    cols = sr.selected;
    const auto need = static_cast<std::size_t>(config.k + 1);
    if (cols.size() < need) {
        std::vector<Index> order(static_cast<std::size_t>(d.p()));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](Index l, Index r) {
            return sr.scores[static_cast<std::size_t>(l)] < sr.scores[static_cast<std::size_t>(r)];
        });
        for (auto j : order) {
            if (cols.size() >= need) break;
            if (std::find(cols.begin(), cols.end(), j) == cols.end()) cols.push_back(j);
        }
        std::sort(cols.begin(), cols.end());
    }
    if (screen_out) *screen_out = std::move(sr);
    return cols;
}

/// Per-arm SIR + LOESS on (optionally screened) covariates.
inline Recommender fit_recommender(const Dataset& d, const RecommenderConfig& config = {}) {
    if (config.k < 1) throw invalid_argument("k must be at least 1");
    std::optional<ScreenResult> screen;
    const auto cols = choose_columns(d, config, &screen);
    if (static_cast<Index>(cols.size()) <= config.k)
        throw invalid_argument("k must be smaller than the number of covariates used");

    Recommender r;
    for (auto c : cols) r.selected_columns.push_back(d.column_names()[static_cast<std::size_t>(c)]);
    Eigen::MatrixXd x(d.n(), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) x.col(static_cast<Index>(c)) = d.x().col(cols[c]);

    std::optional<double> bandwidth;
    if (config.bandwidth_schedule) bandwidth = bandwidth_schedule(d.n(), config.k);

    const Index min_rows = std::max<Index>(min_arm_size, config.k + 2);
    for (const auto& view : split_by_arm(d)) {
        try {
            if (view.n_a() < min_rows)
                throw insufficient_data_error(std::to_string(view.n_a()) + " rows; at least " +
                                              std::to_string(min_rows) + " required");
            Eigen::MatrixXd x_arm = rows_of(x, view);
            Eigen::VectorXd y_arm = rows_of(d.y(), view);
            SirFit sir = fit_sir(x_arm, y_arm, config.k, config.slices);
            Eigen::MatrixXd u = feature_scores(sir, x_arm);
            LoessModel loess = fit_loess(std::move(u), std::move(y_arm), config.span, config.degree, bandwidth);
            r.arms.push_back({view.label, std::move(sir), std::move(loess)});
        } catch (const error& e) {
            throw error("treatment arm '" + view.label.str() + "': " + e.what());
        }
    }
    r.propensity = empirical_propensity(d);
    r.provenance = provenance_of(config);
    r.provenance["n"] = d.n();
    r.provenance["p_input"] = d.p();
    if (screen) r.provenance["screen_threshold"] = screen->threshold;
    return r;
}

/// argmax with ties resolved toward the smallest label.
inline void select_best(Recommendation& rec) {
    if (rec.per_arm.empty()) throw invalid_argument("no arms to choose from");
    std::sort(rec.per_arm.begin(), rec.per_arm.end(),
              [](const ArmPrediction& l, const ArmPrediction& r) { return l.label < r.label; });
    std::size_t best = 0;
    for (std::size_t i = 1; i < rec.per_arm.size(); ++i)
        if (rec.per_arm[i].predicted_response > rec.per_arm[best].predicted_response) best = i;
    rec.best = rec.per_arm[best].label;
    double runner_up = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < rec.per_arm.size(); ++i)
        if (i != best) runner_up = std::max(runner_up, rec.per_arm[i].predicted_response);
    rec.margin = rec.per_arm.size() > 1 ? rec.per_arm[best].predicted_response - runner_up : 0.0;
}

inline Recommendation recommend(const Recommender& r, const Eigen::VectorXd& x_new) {
    if (x_new.size() != r.p())
        throw invalid_argument("recommend: expected " + std::to_string(r.p()) + " covariates, got " +
                               std::to_string(x_new.size()));
    if (!x_new.allFinite()) throw invalid_argument("recommend: non-finite covariate");
    Recommendation rec;
    const Eigen::MatrixXd row = x_new.transpose();
    for (const auto& arm : r.arms) {
        ArmPrediction ap;
        ap.label = arm.label;
        ap.feature_score = feature_scores(arm.sir, row).row(0).transpose();
        auto pred = predict(arm.loess, ap.feature_score);
        ap.predicted_response = pred.value;
        ap.clamped = pred.clamped;
        ap.degenerate = pred.degenerate;
        rec.per_arm.push_back(std::move(ap));
    }
    select_best(rec);
    return rec;
}

/// Columns of `d` in the order of the rule's selected columns.
inline Eigen::MatrixXd covariates_for(const Recommender& r, const Dataset& d) {
    Eigen::MatrixXd x(d.n(), r.p());
    std::vector<std::string> missing;
    for (std::size_t c = 0; c < r.selected_columns.size(); ++c) {
        auto j = d.column_index(r.selected_columns[c]);
        if (!j) missing.push_back(r.selected_columns[c]);
        else x.col(static_cast<Index>(c)) = d.x().col(*j);
    }
    if (!missing.empty()) {
        std::string msg = "missing covariate columns:";
        for (const auto& m : missing) msg += " " + m;
        throw schema_error(msg);
    }
    return x;
}

inline std::vector<Recommendation> recommend_batch(const Recommender& r, const Eigen::MatrixXd& x,
                                                   unsigned threads = 1) {
    std::vector<Recommendation> out(static_cast<std::size_t>(x.rows()));
    parallel_for(
        out.size(), [&](std::size_t i) { out[i] = recommend(r, x.row(static_cast<Index>(i)).transpose()); },
        threads);
    return out;
}

inline std::vector<Label> recommended_labels(const Recommender& r, const Eigen::MatrixXd& x, unsigned threads = 1) {
    std::vector<Label> out;
    for (auto& rec : recommend_batch(r, x, threads)) out.push_back(std::move(rec.best));
    return out;
}

// ---------------------------------------------------------------------------
// Plot data

enum class PlotKind { scatter, curve, marker };

inline const char* to_string(PlotKind k) {
    switch (k) {
    case PlotKind::scatter: return "scatter";
    case PlotKind::curve: return "curve";
    default: return "marker";
    }
}

struct PlotRow {
    Label arm;
    PlotKind kind;
    Eigen::VectorXd u;
    double y;
    std::string patient_id;
};

struct PlotData {
    Eigen::Index k = 1;
    std::vector<PlotRow> rows;
};

/// Scatter rows (u_i, y_i) of each arm's rows in `d`, fitted curves (k = 1),
/// and per-arm (u, predicted y) markers for the listed patient ids.
inline PlotData plot_data(const Recommender& r, const Dataset& d, int grid_size = 100,
                          const std::vector<std::string>& markers = {}) {
    PlotData out;
    out.k = r.arms.front().sir.k();
    std::vector<Index> marker_rows;
    for (const auto& id : markers) {
        auto row = d.row_of_id(id);
        if (!row) throw invalid_argument("unknown patient id '" + id + "'");
        marker_rows.push_back(*row);
    }
    const Eigen::MatrixXd x = covariates_for(r, d);
    for (const auto& arm : r.arms) {
        const Eigen::MatrixXd u = feature_scores(arm.sir, x);
        for (Index i = 0; i < d.n(); ++i)
            if (d.a()[i] == arm.label)
                out.rows.push_back({arm.label, PlotKind::scatter, u.row(i).transpose(), d.y()[i], d.ids()[i]});
        if (out.k == 1) {
            for (const auto& pt : curve(arm.loess, grid_size))
                out.rows.push_back({arm.label, PlotKind::curve, Eigen::VectorXd::Constant(1, pt.u), pt.y, ""});
        }
        for (auto i : marker_rows) {
            Eigen::VectorXd ui = u.row(i).transpose();
            out.rows.push_back({arm.label, PlotKind::marker, ui, predict(arm.loess, ui).value, d.ids()[i]});
        }
    }
    return out;
}

/// Long format: arm,kind,u,y,patient_id (u1,u2,... when k > 1).
inline void write_plot_csv(std::ostream& os, const PlotData& pd) {
    os << "arm,kind";
    if (pd.k == 1) os << ",u";
    else
        for (Eigen::Index j = 0; j < pd.k; ++j) os << ",u" << (j + 1);
    os << ",y,patient_id\n";
    for (const auto& row : pd.rows) {
        os << detail::quote_csv(row.arm.str()) << ',' << to_string(row.kind);
        for (Eigen::Index j = 0; j < row.u.size(); ++j) os << ',' << detail::format_double(row.u[j]);
        os << ',' << detail::format_double(row.y) << ',' << detail::quote_csv(row.patient_id) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Serialization

inline json to_json(const Recommender& r) {
    json j;
    j["schema_version"] = model_schema_version;
    j["arms"] = json::array();
    for (const auto& arm : r.arms) {
        json a;
        a["label"] = arm.label.str();
        a["sir"] = to_json(arm.sir);
        a["loess"] = to_json(arm.loess);
        j["arms"].push_back(std::move(a));
    }
    j["propensity"] = json::object();
    for (const auto& [label, p] : r.propensity) j["propensity"][label.str()] = p;
    j["selected_columns"] = r.selected_columns;
    j["provenance"] = r.provenance;
    return j;
}

inline Recommender recommender_from_json(const json& j) {
    if (j.value("schema_version", 0) != model_schema_version) throw error("unsupported model schema_version");
    Recommender r;
    for (const auto& a : j.at("arms")) {
        ArmModel arm{Label(a.at("label").get<std::string>()), sir_from_json(a.at("sir")),
                     loess_from_json(a.at("loess"))};
        r.arms.push_back(std::move(arm));
    }
    std::sort(r.arms.begin(), r.arms.end(), [](const ArmModel& l, const ArmModel& r) { return l.label < r.label; });
    for (const auto& [label, p] : j.at("propensity").items()) r.propensity[Label(label)] = p.get<double>();
    r.selected_columns = j.at("selected_columns").get<std::vector<std::string>>();
    r.provenance = j.value("provenance", json::object());
    if (r.arms.size() < 2) throw error("model must contain at least 2 arms");
    for (const auto& arm : r.arms)
        if (arm.sir.p() != r.p()) throw error("model arms disagree with selected_columns");
    return r;
}

inline json to_json(const Recommendation& rec) {
    json j;
    j["per_arm"] = json::object();
    for (const auto& ap : rec.per_arm) {
        json a;
        a["feature_score"] = detail::to_json_vector(ap.feature_score);
        a["predicted_response"] = ap.predicted_response;
        a["clamped"] = ap.clamped;
        j["per_arm"][ap.label.str()] = std::move(a);
    }
    j["best"] = rec.best.str();
    j["margin"] = rec.margin;
    return j;
}

} // namespace featrec
