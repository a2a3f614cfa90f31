#pragma once
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <digeo/rng.hpp>
#include <digeo/types.hpp>

namespace digeo {

/// A d x N collection of class-center vectors, one per column.
///
/// Frames are plain value types. Unit norm is an expected property of the
/// constructors below, not an invariant enforced here, so that malformed
/// frames can still be loaded and inspected by `verify_frame`.
template <class Scalar_>
class Frame
{
public:
    using value_t = Scalar_;
    using matrix_t = colmat_type<value_t>;

    Frame() = default;
    explicit Frame(matrix_t vectors) : vectors_(std::move(vectors)) {}

    index_type dim() const { return vectors_.rows(); }
    index_type num_classes() const { return vectors_.cols(); }
    const matrix_t& vectors() const { return vectors_; }
    auto column(index_type i) const { return vectors_.col(i); }

    template <class NewScalar>
    Frame<NewScalar> cast() const
    {
        return Frame<NewScalar>(vectors_.template cast<NewScalar>());
    }

    /// Bitwise equality (shape and every coefficient).
    friend bool operator==(const Frame& a, const Frame& b)
    {
        if (a.dim() != b.dim() || a.num_classes() != b.num_classes()) return false;
        for (index_type k = 0; k < a.vectors_.size(); ++k) {
            if (a.vectors_.data()[k] != b.vectors_.data()[k]) return false;
        }
        return true;
    }

private:
    matrix_t vectors_;
};

struct IterativeConfig
{
    int max_iters = 10000;
    double learning_rate = 0.2;
    double stop_threshold = 1e-7;
    std::uint64_t seed = 0;
    // Step size is multiplied by `decay_factor` every `decay_every` iterations.
    int decay_every = 600;
    double decay_factor = 0.5;
    // Improvement of the best objective is measured over this many iterations.
    int stop_window = 10;
    // The stop test is armed once step <= learning_rate * stop_step_ratio;
    // at larger steps the iterate oscillates and the best objective stalls.
    double stop_step_ratio = 1e-4;

    void validate() const
    {
        if (max_iters < 1) throw domain_error("IterativeConfig: max_iters must be >= 1");
        if (!(learning_rate > 0)) throw domain_error("IterativeConfig: learning_rate must be > 0");
        if (!(stop_threshold >= 0)) throw domain_error("IterativeConfig: stop_threshold must be >= 0");
        if (decay_every < 1) throw domain_error("IterativeConfig: decay_every must be >= 1");
        if (!(decay_factor > 0 && decay_factor <= 1)) {
            throw domain_error("IterativeConfig: decay_factor must lie in (0, 1]");
        }
        if (stop_window < 1) throw domain_error("IterativeConfig: stop_window must be >= 1");
        if (!(stop_step_ratio > 0)) throw domain_error("IterativeConfig: stop_step_ratio must be > 0");
    }
};

template <class Scalar_>
struct IterativeResult
{
    Frame<Scalar_> frame;
    bool converged = false;
    int iterations = 0;
    Scalar_ initial_objective = 0;
    Scalar_ objective = 0;
};

struct FrameReport
{
    double max_norm_deviation = 0;
    double max_cosine_deviation_from_equiangular = 0;
    bool is_etf = false;
};

namespace detail {

/// Orthonormal basis of the complement of the all-ones vector (Helmert basis).
template <class Scalar>
colmat_type<Scalar> helmert_basis(index_type n)
{
    colmat_type<Scalar> basis = colmat_type<Scalar>::Zero(n, n - 1);
    for (index_type j = 1; j < n; ++j) {
        const Scalar scale = Scalar(1) / std::sqrt(Scalar(j) * Scalar(j + 1));
        basis.col(j - 1).head(j).setConstant(scale);
        basis(j, j - 1) = -Scalar(j) * scale;
    }
    return basis;
}

template <class Scalar>
colmat_type<Scalar> gaussian_matrix(index_type rows, index_type cols, Rng& rng)
{
    colmat_type<Scalar> m(rows, cols);
    for (index_type k = 0; k < m.size(); ++k) m.data()[k] = static_cast<Scalar>(rng.normal());
    return m;
}

template <class Derived>
void normalize_columns(Eigen::MatrixBase<Derived>& w)
{
    for (index_type i = 0; i < w.cols(); ++i) {
        const auto n = w.col(i).norm();
        if (n > 0) w.col(i) /= n;
    }
}

/// Squared distance to the nearest other column for every column.
/// Ties resolve to the lowest index.
template <class Derived>
auto nearest_neighbors(const Eigen::MatrixBase<Derived>& w,
                       std::vector<index_type>& nn_index)
{
    using Scalar = typename Derived::Scalar;
    const index_type n = w.cols();
    const colmat_type<Scalar> gram = w.transpose() * w;
    colvec_type<Scalar> nn_dist(n);
    nn_index.assign(static_cast<std::size_t>(n), 0);
    for (index_type i = 0; i < n; ++i) {
        Scalar best = std::numeric_limits<Scalar>::infinity();
        index_type arg = (i == 0) ? 1 : 0;
        for (index_type j = 0; j < n; ++j) {
            if (j == i) continue;
            const Scalar dist = gram(i, i) + gram(j, j) - 2 * gram(i, j);
            if (dist < best) {
                best = dist;
                arg = j;
            }
        }
        nn_dist(i) = best;
        nn_index[static_cast<std::size_t>(i)] = arg;
    }
    return nn_dist;
}

} // namespace detail

/// Sum over columns of the squared distance to the nearest other column.
template <class Derived>
typename Derived::Scalar separation_objective(const Eigen::MatrixBase<Derived>& w)
{
    if (w.cols() < 2) return 0;
    std::vector<index_type> nn;
    return detail::nearest_neighbors(w, nn).sum();
}

/// Closed-form simplex ETF: sqrt(N/(N-1)) U (I - 11^T/N).
///
/// U is obtained by orthonormalizing a seeded Gaussian d x N matrix. When
/// d = N-1 there is no d x N matrix with orthonormal columns, so the
/// centering projector is factored through its rank-(N-1) Helmert basis
/// and U shrinks to d x (N-1); the Gram matrix is identical.
template <class Scalar = double>
Frame<Scalar> etf_closed_form(index_type num_classes, index_type dim, std::uint64_t seed)
{
    if (num_classes < 2) throw dimension_error("etf_closed_form: num_classes must be >= 2");
    if (dim < num_classes - 1) {
        throw dimension_error("etf_closed_form: dim " + std::to_string(dim) +
                              " < num_classes - 1 = " + std::to_string(num_classes - 1) +
                              "; use the iterative optimizer");
    }
    const index_type n = num_classes;
    const index_type rank = (dim >= n) ? n : n - 1;
    Rng rng(seed);
    const colmat_type<Scalar> gaussian = detail::gaussian_matrix<Scalar>(dim, rank, rng);
    Eigen::HouseholderQR<colmat_type<Scalar>> qr(gaussian);
    const colmat_type<Scalar> rotation =
        qr.householderQ() * colmat_type<Scalar>::Identity(dim, rank);

    const Scalar scale = std::sqrt(Scalar(n) / Scalar(n - 1));
    colmat_type<Scalar> vectors;
    if (rank == n) {
        const colmat_type<Scalar> centering =
            colmat_type<Scalar>::Identity(n, n) -
            colmat_type<Scalar>::Constant(n, n, Scalar(1) / Scalar(n));
        vectors = scale * rotation * centering;
    } else {
        vectors = scale * rotation * detail::helmert_basis<Scalar>(n).transpose();
    }
    return Frame<Scalar>(std::move(vectors));
}

/// Max-min separation by projected gradient ascent.
///
/// Every column is pushed away from its nearest neighbour with gradient
/// 2 (w_i - w_nn(i)) and renormalized. The best iterate (by objective) is
/// returned. `converged` is set when, with the step already decayed below
/// `learning_rate * stop_step_ratio`, the best objective improved by less
/// than `stop_threshold` over the last `stop_window` iterations.
template <class Scalar = double>
IterativeResult<Scalar> frame_iterative(index_type num_classes, index_type dim,
                                        const IterativeConfig& config)
{
    config.validate();
    if (num_classes < 2) throw dimension_error("frame_iterative: num_classes must be >= 2");
    if (dim < 1) throw dimension_error("frame_iterative: dim must be >= 1");

    Rng rng(config.seed);
    colmat_type<Scalar> w = detail::gaussian_matrix<Scalar>(dim, num_classes, rng);
    detail::normalize_columns(w);

    IterativeResult<Scalar> result;
    std::vector<index_type> nn;
    result.initial_objective = detail::nearest_neighbors(w, nn).sum();
    colmat_type<Scalar> best = w;
    Scalar best_objective = result.initial_objective;

    std::vector<Scalar> best_history;
    best_history.reserve(static_cast<std::size_t>(config.max_iters) + 1);
    best_history.push_back(best_objective);

    Scalar step = static_cast<Scalar>(config.learning_rate);
    const Scalar armed_below = static_cast<Scalar>(config.learning_rate * config.stop_step_ratio);
    colmat_type<Scalar> grad(dim, num_classes);
    int t = 0;
    for (; t < config.max_iters; ++t) {
        if (t > 0 && t % config.decay_every == 0) step *= static_cast<Scalar>(config.decay_factor);

        detail::nearest_neighbors(w, nn);
        for (index_type i = 0; i < num_classes; ++i) {
            grad.col(i) = 2 * (w.col(i) - w.col(nn[static_cast<std::size_t>(i)]));
        }
        w += step * grad;
        detail::normalize_columns(w);

        const Scalar objective = detail::nearest_neighbors(w, nn).sum();
        if (objective > best_objective) {
            best_objective = objective;
            best = w;
        }
        best_history.push_back(best_objective);

        const auto h = best_history.size();
        const auto window = static_cast<std::size_t>(config.stop_window);
        if (step <= armed_below && h > window &&
            best_history[h - 1] - best_history[h - 1 - window] < static_cast<Scalar>(config.stop_threshold)) {
            result.converged = true;
            ++t;
            break;
        }
    }

    result.iterations = t;
    result.objective = best_objective;
    result.frame = Frame<Scalar>(std::move(best));
    return result;
}

/// N x N cosine similarity between frame columns.
template <class Scalar>
colmat_type<Scalar> pairwise_cosine(const Frame<Scalar>& frame)
{
    const auto& w = frame.vectors();
    const colvec_type<Scalar> norms = w.colwise().norm().transpose();
    for (index_type i = 0; i < norms.size(); ++i) {
        if (!(norms(i) > 0)) {
            throw domain_error("pairwise_cosine: column " + std::to_string(i) + " has zero norm");
        }
    }
    colmat_type<Scalar> cosine = w.transpose() * w;
    for (index_type j = 0; j < cosine.cols(); ++j) {
        for (index_type i = 0; i < j; ++i) {
            Scalar c = cosine(i, j) / (norms(i) * norms(j));
            c = std::clamp(c, Scalar(-1), Scalar(1));
            cosine(i, j) = c;
            cosine(j, i) = c;
        }
        cosine(j, j) = 1;
    }
    return cosine;
}

/// Largest off-diagonal cosine, i.e. the cosine of the closest pair.
template <class Scalar>
Scalar nearest_pair_cosine(const Frame<Scalar>& frame)
{
    const auto cosine = pairwise_cosine(frame);
    Scalar best = -1;
    for (index_type j = 0; j < cosine.cols(); ++j) {
        for (index_type i = 0; i < cosine.rows(); ++i) {
            if (i != j) best = std::max(best, cosine(i, j));
        }
    }
    return best;
}

template <class Scalar>
FrameReport verify_frame(const Frame<Scalar>& frame, double tolerance)
{
    FrameReport report;
    const auto& w = frame.vectors();
    const index_type n = frame.num_classes();
    for (index_type i = 0; i < n; ++i) {
        const double dev = std::abs(static_cast<double>(w.col(i).norm()) - 1.0);
        report.max_norm_deviation = std::max(report.max_norm_deviation, dev);
    }
    if (n >= 2) {
        const double target = -1.0 / static_cast<double>(n - 1);
        const auto cosine = pairwise_cosine(frame);
        for (index_type j = 0; j < n; ++j) {
            for (index_type i = 0; i < n; ++i) {
                if (i == j) continue;
                const double dev = std::abs(static_cast<double>(cosine(i, j)) - target);
                report.max_cosine_deviation_from_equiangular =
                    std::max(report.max_cosine_deviation_from_equiangular, dev);
            }
        }
    }
    report.is_etf = report.max_norm_deviation <= tolerance &&
                    report.max_cosine_deviation_from_equiangular <= tolerance;
    return report;
}

} // namespace digeo
