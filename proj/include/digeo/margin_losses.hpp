#pragma once
#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include <digeo/types.hpp>

namespace digeo {

/// Instance-frequency prior over foreground classes plus the background slot.
struct ClassPrior
{
    std::vector<double> foreground;
    double background = 0.5;

    std::size_t num_slots() const { return foreground.size() + 1; }

    /// Throws domain_error unless every entry is > 0 and the total is 1 (1e-9).
    void validate() const;
};

/// Per-slot logit margins; the last entry belongs to the background slot.
struct MarginVector
{
    Eigen::VectorXd margins;
    bool learnable = false;
};

template <class Scalar_>
struct SoftTarget
{
    colvec_type<Scalar_> probs;
    index_type label = 0;
};

template <class Scalar_>
struct LossGradient
{
    colvec_type<Scalar_> d_logits;
    colvec_type<Scalar_> d_margins;
};

/// m_c = -log p_c for foreground slots, m = -log p_- for the background slot.
MarginVector margins_from_prior(const ClassPrior& prior);

void to_json(nlohmann::json& j, const ClassPrior& prior);
void from_json(const nlohmann::json& j, ClassPrior& prior);
void to_json(nlohmann::json& j, const MarginVector& margins);
void from_json(const nlohmann::json& j, MarginVector& margins);

namespace detail {

template <class DerivedV, class DerivedM>
void check_logits_and_margins(const Eigen::MatrixBase<DerivedV>& logits,
                              const Eigen::MatrixBase<DerivedM>& margins)
{
    if (logits.size() != margins.size()) {
        throw dimension_error("logit/margin length mismatch: " + std::to_string(logits.size()) +
                              " vs " + std::to_string(margins.size()));
    }
    if (logits.size() == 0) throw dimension_error("empty logit vector");
    if (!logits.allFinite() || !margins.allFinite()) {
        throw domain_error("logits and margins must be finite");
    }
}

inline void check_label(index_type label, index_type size)
{
    if (label < 0 || label >= size) {
        throw domain_error("label " + std::to_string(label) + " out of range [0, " +
                           std::to_string(size) + ")");
    }
}

template <class Scalar>
void check_target(const SoftTarget<Scalar>& target, index_type size)
{
    if (target.probs.size() != size) {
        throw dimension_error("soft target length " + std::to_string(target.probs.size()) +
                              " does not match logits length " + std::to_string(size));
    }
    check_label(target.label, size);
    if ((target.probs.array() < Scalar(0)).any()) throw domain_error("soft target has negative mass");
    if (std::abs(static_cast<double>(target.probs.sum()) - 1.0) > 1e-9) {
        throw domain_error("soft target does not sum to 1");
    }
}

} // namespace detail

/// log softmax(v - m), computed with max subtraction.
template <class DerivedV, class DerivedM>
colvec_type<typename DerivedV::Scalar>
adjusted_log_softmax(const Eigen::MatrixBase<DerivedV>& logits,
                     const Eigen::MatrixBase<DerivedM>& margins)
{
    using Scalar = typename DerivedV::Scalar;
    const colvec_type<Scalar> z = logits - margins;
    const Scalar zmax = z.maxCoeff();
    const Scalar lse = zmax + std::log((z.array() - zmax).exp().sum());
    return (z.array() - lse).matrix();
}

/// softmax(v - m).
template <class DerivedV, class DerivedM>
colvec_type<typename DerivedV::Scalar>
adjusted_softmax(const Eigen::MatrixBase<DerivedV>& logits,
                 const Eigen::MatrixBase<DerivedM>& margins)
{
    return adjusted_log_softmax(logits, margins).array().exp().matrix();
}

/// Cross-entropy of softmax(v - m) against a hard label.
template <class DerivedV, class DerivedM>
typename DerivedV::Scalar prior_margin_ce(const Eigen::MatrixBase<DerivedV>& logits,
                                          index_type label,
                                          const Eigen::MatrixBase<DerivedM>& margins)
{
    detail::check_logits_and_margins(logits, margins);
    detail::check_label(label, logits.size());
    return -adjusted_log_softmax(logits, margins)(label);
}

/// d/dv_c = softmax(v - m)_c - [c == label]; d/dm = -d/dv.
template <class DerivedV, class DerivedM>
LossGradient<typename DerivedV::Scalar>
prior_margin_ce_grad(const Eigen::MatrixBase<DerivedV>& logits, index_type label,
                     const Eigen::MatrixBase<DerivedM>& margins)
{
    detail::check_logits_and_margins(logits, margins);
    detail::check_label(label, logits.size());
    LossGradient<typename DerivedV::Scalar> g;
    g.d_logits = adjusted_softmax(logits, margins);
    g.d_logits(label) -= 1;
    g.d_margins = -g.d_logits;
    return g;
}

/// Teacher probabilities softmax(v^t - m^t) paired with the hard label.
template <class DerivedV, class DerivedM>
SoftTarget<typename DerivedV::Scalar>
teacher_soft_target(const Eigen::MatrixBase<DerivedV>& teacher_logits,
                    const Eigen::MatrixBase<DerivedM>& teacher_margins, index_type label)
{
    detail::check_logits_and_margins(teacher_logits, teacher_margins);
    detail::check_label(label, teacher_logits.size());
    SoftTarget<typename DerivedV::Scalar> target;
    target.probs = adjusted_softmax(teacher_logits, teacher_margins);
    // Renormalize so the sum-to-one check holds to the last ulp.
    target.probs /= target.probs.sum();
    target.label = label;
    return target;
}

/// Mixed target (p^t + y) / 2.
template <class Scalar>
colvec_type<Scalar> distill_weights(const SoftTarget<Scalar>& target)
{
    colvec_type<Scalar> w = target.probs / Scalar(2);
    w(target.label) += Scalar(0.5);
    return w;
}

/// -sum_c (p^t_c + y_c)/2 * log softmax(v^s - m^s)_c.
template <class DerivedV, class DerivedM, class Scalar>
Scalar adapt_distill_loss(const Eigen::MatrixBase<DerivedV>& student_logits,
                          const Eigen::MatrixBase<DerivedM>& student_margins,
                          const SoftTarget<Scalar>& target)
{
    detail::check_logits_and_margins(student_logits, student_margins);
    detail::check_target(target, student_logits.size());
    return -distill_weights(target).dot(adjusted_log_softmax(student_logits, student_margins));
}

/// d/dv^s_c = softmax(v^s - m^s)_c - (p^t_c + y_c)/2; d/dm^s = -d/dv^s.
template <class DerivedV, class DerivedM, class Scalar>
LossGradient<Scalar> adapt_distill_grad(const Eigen::MatrixBase<DerivedV>& student_logits,
                                        const Eigen::MatrixBase<DerivedM>& student_margins,
                                        const SoftTarget<Scalar>& target)
{
    detail::check_logits_and_margins(student_logits, student_margins);
    detail::check_target(target, student_logits.size());
    LossGradient<Scalar> g;
    g.d_logits = adjusted_softmax(student_logits, student_margins) - distill_weights(target);
    g.d_margins = -g.d_logits;
    return g;
}

} // namespace digeo
