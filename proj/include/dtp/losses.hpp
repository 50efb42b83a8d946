#ifndef DTP_LOSSES_HPP
#define DTP_LOSSES_HPP

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dtp/error.hpp"
#include "dtp/tensor.hpp"
#include "dtp/textpipe.hpp"
#include "dtp/transformer.hpp"

namespace dtp {

// ---------------------------------------------------------------------------
// Batch containers.
// ---------------------------------------------------------------------------

struct BatchFeatures {
    Tensor image_features;  // [B x d]
    Tensor text_features;   // [B x d]
    std::vector<int> labels;
    std::vector<std::array<Tensor, kNumBodyParts>> local_image;  // per sample, [1 x d] each
    std::vector<std::array<Tensor, kNumBodyParts>> local_text;
    Tensor logit_scale;  // learnable scalar; tau = exp(logit_scale)
};

/// Base distillation temperature plus learnable offsets for the student and
/// teacher sides. Effective temperatures are smooth-clamped into
/// [clamp_lo, clamp_hi]; the clamp is exact identity away from the bounds.
struct TemperaturePair {
    double base = 2.0;
    Tensor delta_student;  // learnable scalar
    Tensor delta_teacher;  // learnable scalar
    double clamp_lo = 0.25;
    double clamp_hi = 16.0;
    double clamp_width = 0.25;

    static TemperaturePair init(double base_temperature) {
        if (!(base_temperature > 0.0))
            throw DomainError("base distillation temperature must be positive");
        TemperaturePair t;
        t.base = base_temperature;
        t.delta_student = Tensor::scalar(0.0, true);
        t.delta_teacher = Tensor::scalar(0.0, true);
        return t;
    }

    void visit(const ParamVisitor& fn, const std::string& prefix) {
        fn(prefix + ".delta_student", delta_student);
        fn(prefix + ".delta_teacher", delta_teacher);
    }

    bool student_clamped() const {
        const double u = base + delta_student.item();
        return u < clamp_lo + clamp_width || u > clamp_hi - clamp_width;
    }
    bool teacher_clamped() const {
        const double u = base + delta_teacher.item();
        return u < clamp_lo + clamp_width || u > clamp_hi - clamp_width;
    }
};

/// C1 clamp into [lo, hi]: exact identity on [lo+w, hi-w], exponential
/// saturation toward the bounds outside, gradient never exactly zero.
inline Tensor smooth_clamp(const Tensor& u, double lo, double hi, double w) {
    return elementwise_unary(
        u,
        [lo, hi, w](double x) {
            if (x < lo + w) return lo + w * std::exp((x - (lo + w)) / w);
            if (x > hi - w) return hi - w * std::exp(-(x - (hi - w)) / w);
            return x;
        },
        [lo, hi, w](double x, double) {
            if (x < lo + w) return std::exp((x - (lo + w)) / w);
            if (x > hi - w) return std::exp(-(x - (hi - w)) / w);
            return 1.0;
        });
}

// ---------------------------------------------------------------------------
// Supervised contrastive loss over a similarity matrix.
// ---------------------------------------------------------------------------

namespace detail {
inline Tensor mask_diagonal_col(const Tensor& row, std::size_t i) {
    const std::size_t n = row.cols();
    if (i == 0) return slice_cols(row, 1, n - 1);
    if (i == n - 1) return slice_cols(row, 0, n - 1);
    return concat_cols({slice_cols(row, 0, i), slice_cols(row, i + 1, n - i - 1)});
}
}  // namespace detail

/// Mean over anchors (those with at least one positive) of the mean over
/// their positives p of -log( exp(s_ip * tau) / sum_{a != i} exp(s_ia * tau) ),
/// tau = exp(logit_scale). Anchors without positives are skipped.
inline Tensor supcon(const Tensor& similarities, const std::vector<int>& labels,
                     const Tensor& logit_scale) {
    if (similarities.rank() != 2 || similarities.rows() != similarities.cols())
        throw ShapeError("supcon expects a square similarity matrix, got " +
                         shape_str(similarities.shape()));
    const std::size_t b = similarities.rows();
    if (labels.size() != b) throw ShapeError("supcon: label count does not match batch");
    if (b < 2) throw DataError("supcon: batch must contain at least 2 samples");

    Tensor tau = exp(logit_scale);
    Tensor scaled = mul(similarities, tau);

    Tensor total;
    std::size_t anchors_used = 0;
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<std::size_t> positives;
        for (std::size_t p = 0; p < b; ++p)
            if (p != i && labels[p] == labels[i]) positives.push_back(p);
        if (positives.empty()) continue;

        Tensor row = slice_rows(scaled, i, 1);
        Tensor lse = row_logsumexp(detail::mask_diagonal_col(row, i));  // [1 x 1]
        Tensor pos_sum;
        for (std::size_t p : positives) {
            Tensor term = sub(lse, slice_cols(row, p, 1));
            pos_sum = pos_sum.defined() ? add(pos_sum, term) : term;
        }
        Tensor anchor_loss = mul_scalar(pos_sum, 1.0 / static_cast<double>(positives.size()));
        total = total.defined() ? add(total, anchor_loss) : anchor_loss;
        ++anchors_used;
    }
    if (!total.defined())
        throw DataError("supcon: degenerate batch, no anchor has a positive pair");
    return sum(mul_scalar(total, 1.0 / static_cast<double>(anchors_used)));
}

/// Symmetric text<->image alignment: supcon over text-anchored similarities
/// plus supcon over the transposed, image-anchored direction. Feature rows
/// are L2-normalized before the similarity products.
inline Tensor global_loss(const BatchFeatures& batch) {
    if (batch.image_features.shape() != batch.text_features.shape())
        throw ShapeError("global_loss: feature matrices differ: " +
                         shape_str(batch.image_features.shape()) + " vs " +
                         shape_str(batch.text_features.shape()));
    Tensor img_n = l2_normalize_rows(batch.image_features);
    Tensor txt_n = l2_normalize_rows(batch.text_features);
    Tensor sim_t2i = matmul(txt_n, transpose(img_n));  // [B x B], rows are text anchors
    Tensor sim_i2t = transpose(sim_t2i);
    return add(supcon(sim_t2i, batch.labels, batch.logit_scale),
               supcon(sim_i2t, batch.labels, batch.logit_scale));
}

// ---------------------------------------------------------------------------
// Local (body-part) cosine alignment.
// ---------------------------------------------------------------------------

/// (1/N) sum over the N body parts of the batch-mean of 1 - cos(p_i, f_i).
inline Tensor partial_loss(const std::vector<std::array<Tensor, kNumBodyParts>>& local_image,
                           const std::vector<std::array<Tensor, kNumBodyParts>>& local_text) {
    if (local_image.size() != local_text.size() || local_image.empty())
        throw ShapeError("partial_loss: mismatching or empty local feature batches");
    Tensor part_sum;
    for (int p = 0; p < kNumBodyParts; ++p) {
        std::vector<Tensor> img_rows, txt_rows;
        img_rows.reserve(local_image.size());
        txt_rows.reserve(local_text.size());
        for (std::size_t i = 0; i < local_image.size(); ++i) {
            img_rows.push_back(local_image[i][static_cast<std::size_t>(p)]);
            txt_rows.push_back(local_text[i][static_cast<std::size_t>(p)]);
        }
        Tensor cos = row_cosine(concat_rows(img_rows), concat_rows(txt_rows));  // [B x 1]
        Tensor dist = mean(add_scalar(neg(cos), 1.0));
        part_sum = part_sum.defined() ? add(part_sum, dist) : dist;
    }
    return mul_scalar(part_sum, 1.0 / static_cast<double>(kNumBodyParts));
}

// ---------------------------------------------------------------------------
// Identity cross-entropy and batch-hard triplet.
// ---------------------------------------------------------------------------

inline Tensor id_loss(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2 || logits.rows() != labels.size())
        throw ShapeError("id_loss: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t b = logits.rows();
    Tensor lse = row_logsumexp(logits);  // [B x 1]
    std::vector<Tensor> picked;
    picked.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= logits.cols())
            throw ContractError("id_loss: label " + std::to_string(y) + " outside logit range");
        picked.push_back(slice_cols(slice_rows(logits, i, 1), static_cast<std::size_t>(y), 1));
    }
    return mean(sub(lse, concat_rows(picked)));
}

/// Batch-hard triplet: per anchor, hardest positive distance minus hardest
/// negative distance, hinged at the margin. Anchors lacking a positive or a
/// negative are skipped.
inline Tensor triplet_loss(const Tensor& features, const std::vector<int>& labels,
                           double margin) {
    if (features.rank() != 2 || features.rows() != labels.size())
        throw ShapeError("triplet_loss: features " + shape_str(features.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t b = features.rows();

    // pairwise Euclidean distances, built once
    std::vector<std::vector<Tensor>> dist(b, std::vector<Tensor>(b));
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = i + 1; j < b; ++j) {
            Tensor diff = sub(slice_rows(features, i, 1), slice_rows(features, j, 1));
            Tensor d = sqrt(add_scalar(sum(mul(diff, diff)), 1e-24));
            dist[i][j] = d;
            dist[j][i] = d;
        }

    Tensor total;
    std::size_t anchors_used = 0;
    for (std::size_t i = 0; i < b; ++i) {
        std::ptrdiff_t hardest_pos = -1, hardest_neg = -1;
        double dpos = -1.0, dneg = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < b; ++j) {
            if (j == i) continue;
            const double dij = dist[i][j].item();
            if (labels[j] == labels[i]) {
                if (dij > dpos) {
                    dpos = dij;
                    hardest_pos = static_cast<std::ptrdiff_t>(j);
                }
            } else if (dij < dneg) {
                dneg = dij;
                hardest_neg = static_cast<std::ptrdiff_t>(j);
            }
        }
        if (hardest_pos < 0 || hardest_neg < 0) continue;
        Tensor gap = add_scalar(sub(dist[i][static_cast<std::size_t>(hardest_pos)],
                                    dist[i][static_cast<std::size_t>(hardest_neg)]),
                                margin);
        Tensor hinge = relu(gap);
        total = total.defined() ? add(total, hinge) : hinge;
        ++anchors_used;
    }
    if (!total.defined())
        throw DataError("triplet_loss: degenerate batch, no anchor has both a positive and "
                        "a negative");
    return mul_scalar(total, 1.0 / static_cast<double>(anchors_used));
}

// ---------------------------------------------------------------------------
// Knowledge distillation with (learnable) temperatures.
// ---------------------------------------------------------------------------

namespace detail {

/// -sum_i p_student(i) log p_teacher(i), batch-averaged. Probability vectors
/// are the softmax outputs tempered by the given temperatures (dividing the
/// logits by T renormalizes the softmax probabilities raised to 1/T).
/// Teacher values carry no gradient; the teacher temperature still does.
inline Tensor tempered_cross_entropy(const Tensor& student_logits, const Tensor& teacher_logits,
                                     const Tensor& temp_student, const Tensor& temp_teacher) {
    if (student_logits.shape() != teacher_logits.shape())
        throw ShapeError("distillation: logit shapes differ: " +
                         shape_str(student_logits.shape()) + " vs " +
                         shape_str(teacher_logits.shape()));
    Tensor z_s = student_logits.rank() == 1
                     ? reshape(student_logits, {1, student_logits.size()})
                     : student_logits;
    Tensor z_t = z_s.shape() == teacher_logits.shape()
                     ? teacher_logits.detach()
                     : reshape(teacher_logits.detach(), z_s.shape());
    const std::size_t rows = z_s.rows();
    const std::size_t classes = z_s.cols();
    if (classes < 2) throw ShapeError("distillation needs at least 2 classes");

    Tensor p_student = row_softmax(div(z_s, temp_student));
    Tensor scaled_t = div(z_t, temp_teacher);
    Tensor log_p_teacher = sub(scaled_t, broadcast_col(row_logsumexp(scaled_t), classes));
    Tensor per_elem = neg(mul(p_student, log_p_teacher));
    return mul_scalar(sum(per_elem), 1.0 / static_cast<double>(rows));
}

}  // namespace detail

/// Fixed-temperature distillation: both probability vectors tempered by 1/t.
inline Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, double t) {
    if (!(t > 0.0)) throw DomainError("kd_loss temperature must be positive");
    Tensor temp = Tensor::scalar(t);
    return detail::tempered_cross_entropy(student_logits, teacher_logits, temp, temp);
}

/// Learnable-temperature distillation: student tempered by 1/(t + d1),
/// teacher by 1/(t + d2), both offsets trainable and smooth-clamped.
inline Tensor lkd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                       const TemperaturePair& temps) {
    if (!(temps.base > 0.0)) throw DomainError("lkd_loss base temperature must be positive");
    Tensor temp_s = smooth_clamp(add_scalar(temps.delta_student, temps.base), temps.clamp_lo,
                                 temps.clamp_hi, temps.clamp_width);
    Tensor temp_t = smooth_clamp(add_scalar(temps.delta_teacher, temps.base), temps.clamp_lo,
                                 temps.clamp_hi, temps.clamp_width);
    return detail::tempered_cross_entropy(student_logits, teacher_logits, temp_s, temp_t);
}

// ---------------------------------------------------------------------------
// Stage-II composite.
// ---------------------------------------------------------------------------

struct LossWeights {
    double id = 1.0;
    double triplet = 1.0;
    double global = 1.0;
    double partial = 1.0;  // lambda_TFA
    double lkd = 0.1;
};

struct StageTerms {
    Tensor id;
    Tensor triplet;
    Tensor global;
    Tensor partial;
    Tensor lkd;  // undefined on the first domain (no teacher yet)
};

struct StageLoss {
    Tensor total;
    std::map<std::string, double> components;  // unweighted per-term values
};

/// Weighted sum of whichever terms are present; per-term raw values are kept
/// for the run record.
inline StageLoss stage2_loss(const StageTerms& terms, const LossWeights& w) {
    StageLoss out;
    auto fold = [&](const Tensor& term, double weight, const char* name) {
        if (!term.defined()) return;
        out.components[name] = term.item();
        Tensor weighted = mul_scalar(term, weight);
        out.total = out.total.defined() ? add(out.total, weighted) : weighted;
    };
    fold(terms.id, w.id, "id");
    fold(terms.triplet, w.triplet, "triplet");
    fold(terms.global, w.global, "global");
    fold(terms.partial, w.partial, "partial");
    fold(terms.lkd, w.lkd, "lkd");
    if (!out.total.defined()) throw ContractError("stage2_loss: no loss terms present");
    return out;
}

}  // namespace dtp

#endif  // DTP_LOSSES_HPP
