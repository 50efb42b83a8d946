#ifndef DTP_EVALKIT_HPP
#define DTP_EVALKIT_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dtp/error.hpp"
#include "dtp/synthgen.hpp"

namespace dtp {

// ---------------------------------------------------------------------------
// Retrieval metrics.
// ---------------------------------------------------------------------------

struct EvalOptions {
    /// Exclude same-identity same-camera gallery entries per query
    /// (standard cross-camera protocol). Switchable off for diagnostics.
    bool camera_exclusion = true;
};

using EmbedFn = std::function<std::vector<double>(const SyntheticImage&)>;

struct RankingResult {
    std::vector<std::vector<std::size_t>> ordering;  // per query: gallery indices, best first
    std::vector<double> average_precision;
    std::vector<std::size_t> first_match_rank;  // 1-based rank of the first true match
};

struct EvalResult {
    double map = 0.0;
    double rank1 = 0.0;
    RankingResult ranking;
    std::size_t n_query = 0;
    std::size_t n_gallery = 0;
};

namespace detail {

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
    return dot / denom;
}

}  // namespace detail

/// Average precision for one query given similarities and match flags over
/// the valid gallery. Ranking is by descending similarity with ties broken
/// by ascending index; AP averages precision at each true-match rank.
inline double average_precision(const std::vector<double>& similarity,
                                const std::vector<char>& is_match,
                                std::size_t* first_match_rank = nullptr) {
    const std::size_t n = similarity.size();
    if (n == 0 || is_match.size() != n)
        throw ContractError("average_precision: empty or mismatched inputs");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (similarity[a] != similarity[b]) return similarity[a] > similarity[b];
        return a < b;
    });
    double ap_sum = 0.0;
    std::size_t matches = 0;
    std::size_t first = 0;
    for (std::size_t r = 1; r <= n; ++r) {
        if (is_match[order[r - 1]]) {
            ++matches;
            if (matches == 1) first = r;
            ap_sum += static_cast<double>(matches) / static_cast<double>(r);
        }
    }
    if (matches == 0) throw DataError("average_precision: no true match in gallery");
    if (first_match_rank) *first_match_rank = first;
    return ap_sum / static_cast<double>(matches);
}

/// Cross-camera retrieval evaluation. Each query embeds, ranks the valid
/// gallery by cosine similarity and scores AP; mAP and rank-1 average over
/// queries.
inline EvalResult evaluate(const Split& query, const Split& gallery, const EmbedFn& embed,
                           const EvalOptions& opts = {}) {
    if (query.images.empty() || gallery.images.empty())
        throw DataError("evaluate: empty query or gallery split");
    std::vector<std::vector<double>> gallery_emb;
    gallery_emb.reserve(gallery.images.size());
    for (const auto& img : gallery.images) gallery_emb.push_back(embed(img));

    EvalResult result;
    result.n_query = query.images.size();
    result.n_gallery = gallery.images.size();
    double ap_total = 0.0;
    std::size_t rank1_hits = 0;
    for (std::size_t qi = 0; qi < query.images.size(); ++qi) {
        const auto& q = query.images[qi];
        std::vector<double> q_emb = embed(q);

        std::vector<std::size_t> valid;
        std::vector<double> sims;
        std::vector<char> match;
        bool has_match = false;
        for (std::size_t gi = 0; gi < gallery.images.size(); ++gi) {
            const auto& g = gallery.images[gi];
            if (opts.camera_exclusion && g.identity_id == q.identity_id &&
                g.camera_id == q.camera_id)
                continue;
            valid.push_back(gi);
            sims.push_back(detail::cosine(q_emb, gallery_emb[gi]));
            match.push_back(g.identity_id == q.identity_id);
            has_match = has_match || g.identity_id == q.identity_id;
        }
        if (!has_match)
            throw DataError("protocol error: query " + std::to_string(qi) + " (identity " +
                            std::to_string(q.identity_id) +
                            ") has no valid gallery match after camera exclusion");

        std::size_t first_rank = 0;
        const double ap = average_precision(sims, match, &first_rank);
        ap_total += ap;
        rank1_hits += first_rank == 1;

        std::vector<std::size_t> order(valid.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (sims[a] != sims[b]) return sims[a] > sims[b];
            return valid[a] < valid[b];
        });
        std::vector<std::size_t> gallery_order;
        gallery_order.reserve(order.size());
        for (std::size_t k : order) gallery_order.push_back(valid[k]);
        result.ranking.ordering.push_back(std::move(gallery_order));
        result.ranking.average_precision.push_back(ap);
        result.ranking.first_match_rank.push_back(first_rank);
    }
    result.map = ap_total / static_cast<double>(result.n_query);
    result.rank1 = static_cast<double>(rank1_hits) / static_cast<double>(result.n_query);
    return result;
}

// ---------------------------------------------------------------------------
// Lifelong aggregates and reports.
// ---------------------------------------------------------------------------

/// Unweighted arithmetic means over per-domain (mAP, rank1) pairs.
inline std::pair<double, double> aggregate(const std::vector<std::pair<double, double>>& values) {
    if (values.empty()) throw ContractError("aggregate of an empty metric list");
    double m = 0.0, r = 0.0;
    for (const auto& [a, b] : values) {
        m += a;
        r += b;
    }
    const double n = static_cast<double>(values.size());
    return {m / n, r / n};
}

/// One decimal for text reports; machine-readable output keeps full precision.
inline double round1(double x) { return std::round(x * 10.0) / 10.0; }

struct DomainMetrics {
    int domain_id = -1;
    bool seen = true;
    double map = 0.0;
    double rank1 = 0.0;
    std::size_t n_query = 0;
    std::size_t n_gallery = 0;
};

struct StageReport {
    int stage = 0;           // index in the training order, 0-based
    int trained_domain = -1; // domain whose training completed this stage
    std::vector<DomainMetrics> domains;

    std::pair<double, double> seen_average() const {
        std::vector<std::pair<double, double>> vals;
        for (const auto& d : domains)
            if (d.seen) vals.emplace_back(d.map, d.rank1);
        return aggregate(vals);
    }

    std::pair<double, double> unseen_average() const {
        std::vector<std::pair<double, double>> vals;
        for (const auto& d : domains)
            if (!d.seen) vals.emplace_back(d.map, d.rank1);
        if (vals.empty()) return {0.0, 0.0};
        return aggregate(vals);
    }
};

inline nlohmann::json stage_report_to_json(const StageReport& report) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& d : report.domains)
        entries.push_back(nlohmann::json{{"stage", report.stage},
                                         {"domain", d.domain_id},
                                         {"split", d.seen ? "seen" : "unseen"},
                                         {"mAP", d.map},
                                         {"rank1", d.rank1},
                                         {"n_query", d.n_query},
                                         {"n_gallery", d.n_gallery}});
    return entries;
}

inline StageReport stage_report_from_json(const nlohmann::json& entries, int trained_domain = -1) {
    StageReport report;
    report.trained_domain = trained_domain;
    for (const auto& e : entries) {
        report.stage = e.at("stage").get<int>();
        DomainMetrics d;
        d.domain_id = e.at("domain").get<int>();
        d.seen = e.at("split").get<std::string>() == "seen";
        d.map = e.at("mAP").get<double>();
        d.rank1 = e.at("rank1").get<double>();
        d.n_query = e.at("n_query").get<std::size_t>();
        d.n_gallery = e.at("n_gallery").get<std::size_t>();
        report.domains.push_back(d);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Forgetting / generalizing tendency curves.
// ---------------------------------------------------------------------------

struct CurveRow {
    int stage = 0;
    double first_domain_map = 0.0;
    double first_domain_rank1 = 0.0;
    double unseen_avg_map = 0.0;
    double unseen_avg_rank1 = 0.0;
};

/// First-domain metrics re-measured after every stage, plus the unseen
/// averages: the raw material of forgetting and generalizing curves.
inline std::vector<CurveRow> tendency_curves(const std::vector<StageReport>& reports,
                                             int first_domain_id) {
    if (reports.size() < 2)
        throw ContractError("tendency curves need at least 2 completed stages");
    std::vector<CurveRow> rows;
    for (const auto& report : reports) {
        CurveRow row;
        row.stage = report.stage;
        bool found = false;
        for (const auto& d : report.domains)
            if (d.domain_id == first_domain_id) {
                row.first_domain_map = d.map;
                row.first_domain_rank1 = d.rank1;
                found = true;
            }
        if (!found)
            throw ContractError("first domain " + std::to_string(first_domain_id) +
                                " missing from stage report");
        auto [um, ur] = report.unseen_average();
        row.unseen_avg_map = um;
        row.unseen_avg_rank1 = ur;
        rows.push_back(row);
    }
    return rows;
}

inline void write_curves_csv(const std::string& path, const std::vector<CurveRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write curve table: " + path);
    out << "stage,first_domain_map,first_domain_rank1,unseen_avg_map,unseen_avg_rank1\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", r.stage,
                      r.first_domain_map, r.first_domain_rank1, r.unseen_avg_map,
                      r.unseen_avg_rank1);
        out << buf;
    }
}

}  // namespace dtp

#endif  // DTP_EVALKIT_HPP
