#include <digeo/classifier_head.hpp>

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include <digeo/frame_io.hpp>

namespace digeo {

void HeadParams::validate() const
{
    if (num_background_centers < 1) throw dimension_error("head: num_background_centers must be >= 1");
    if (projector_bias.size() != output_dim()) throw dimension_error("head: bias length != output_dim");
    if (frame.dim() != output_dim()) throw dimension_error("head: frame dim != projector output_dim");
    if (num_foreground() < 1) throw dimension_error("head: frame has no foreground columns");
    if (margins.margins.size() != num_logits()) {
        throw dimension_error("head: margins length " + std::to_string(margins.margins.size()) +
                              " != num_logits " + std::to_string(num_logits()));
    }
}

HeadGradients HeadGradients::zeros_like(const HeadParams& params)
{
    HeadGradients g;
    g.projector_weight = Eigen::MatrixXd::Zero(params.input_dim(), params.output_dim());
    g.projector_bias = Eigen::VectorXd::Zero(params.output_dim());
    g.frame = Eigen::MatrixXd::Zero(params.frame.dim(), params.frame.num_classes());
    g.margins = Eigen::VectorXd::Zero(params.num_logits());
    return g;
}

HeadGradients& HeadGradients::operator*=(double s)
{
    projector_weight *= s;
    projector_bias *= s;
    frame *= s;
    margins *= s;
    return *this;
}

BatchRecord head_forward_batch(const HeadParams& params, const Eigen::Ref<const Eigen::MatrixXd>& inputs)
{
    if (inputs.rows() != params.input_dim()) {
        throw dimension_error("head_forward: feature length " + std::to_string(inputs.rows()) +
                              " != input_dim " + std::to_string(params.input_dim()));
    }
    const index_type nf = params.num_foreground();
    const index_type nb = params.num_background_centers;
    BatchRecord rec;
    rec.input = inputs;
    rec.projected.noalias() = params.projector_weight.transpose() * inputs;
    rec.projected.colwise() += params.projector_bias;
    rec.slot_logits.noalias() = params.frame.vectors().transpose() * rec.projected;

    rec.logits.resize(nf + 1, inputs.cols());
    rec.logits.topRows(nf) = rec.slot_logits.topRows(nf);
    rec.background_slot.resize(static_cast<std::size_t>(inputs.cols()));
    for (index_type b = 0; b < inputs.cols(); ++b) {
        index_type arg = 0;
        double best = rec.slot_logits(nf, b);
        for (index_type k = 1; k < nb; ++k) {
            if (rec.slot_logits(nf + k, b) > best) {
                best = rec.slot_logits(nf + k, b);
                arg = k;
            }
        }
        rec.logits(nf, b) = best;
        rec.background_slot[static_cast<std::size_t>(b)] = arg;
    }
    return rec;
}

HeadGradients head_backward_batch(const HeadParams& params, const BatchRecord& record,
                                  const Eigen::Ref<const Eigen::MatrixXd>& d_logits)
{
    const index_type nf = params.num_foreground();
    if (d_logits.rows() != params.num_logits() || d_logits.cols() != record.batch_size()) {
        throw dimension_error("head_backward: d_logits shape mismatch");
    }
    Eigen::MatrixXd d_slots = Eigen::MatrixXd::Zero(params.frame.num_classes(), d_logits.cols());
    d_slots.topRows(nf) = d_logits.topRows(nf);
    for (index_type b = 0; b < d_logits.cols(); ++b) {
        d_slots(nf + record.background_slot[static_cast<std::size_t>(b)], b) = d_logits(nf, b);
    }

    HeadGradients g;
    const Eigen::MatrixXd d_projected = params.frame.vectors() * d_slots;
    g.projector_weight.noalias() = record.input * d_projected.transpose();
    g.projector_bias = d_projected.rowwise().sum();
    if (params.trainable_classifier) {
        g.frame.noalias() = record.projected * d_slots.transpose();
    } else {
        g.frame = Eigen::MatrixXd::Zero(params.frame.dim(), params.frame.num_classes());
    }
    g.margins = Eigen::VectorXd::Zero(params.num_logits());
    return g;
}

ForwardRecord head_forward(const HeadParams& params, const Eigen::Ref<const Eigen::VectorXd>& feature)
{
    const BatchRecord batch = head_forward_batch(params, feature);
    ForwardRecord rec;
    rec.input = batch.input.col(0);
    rec.projected = batch.projected.col(0);
    rec.logits = batch.logits.col(0);
    rec.background_slot_logits = batch.slot_logits.col(0).tail(params.num_background_centers);
    rec.background_slot = batch.background_slot[0];
    return rec;
}

HeadGradients head_backward(const HeadParams& params, const ForwardRecord& record,
                            const Eigen::Ref<const Eigen::VectorXd>& d_logits)
{
    BatchRecord batch;
    batch.input = record.input;
    batch.projected = record.projected;
    batch.background_slot = {record.background_slot};
    return head_backward_batch(params, batch, d_logits);
}

namespace {

template <class Param, class Grad>
void momentum_update(Param& p, const Grad& g, Param& v, const SgdConfig& config, double weight_decay)
{
    if (v.size() != p.size()) v = Param::Zero(p.rows(), p.cols());
    v = config.momentum * v + g + weight_decay * p;
    p -= config.learning_rate * v;
}

} // namespace

void sgd_step(HeadParams& params, const HeadGradients& grads, const SgdConfig& config, SgdState& state)
{
    if (!(config.learning_rate > 0)) throw domain_error("sgd_step: learning_rate must be > 0");
    momentum_update(params.projector_weight, grads.projector_weight, state.projector_weight, config,
                    config.weight_decay);
    momentum_update(params.projector_bias, grads.projector_bias, state.projector_bias, config, 0.0);
    if (params.trainable_classifier) {
        Eigen::MatrixXd w = params.frame.vectors();
        momentum_update(w, grads.frame, state.frame, config, config.weight_decay);
        params.frame = Frame<double>(std::move(w));
    }
    if (params.margins.learnable) {
        momentum_update(params.margins.margins, grads.margins, state.margins, config, 0.0);
    }
}

RegularizerResult online_etf_regularizer(const Eigen::Ref<const Eigen::MatrixXd>& frame, double strength)
{
    RegularizerResult r;
    const index_type n = frame.cols();
    r.gradient = Eigen::MatrixXd::Zero(frame.rows(), n);
    if (n < 2) return r;
    const Eigen::VectorXd sq = frame.colwise().squaredNorm();
    Eigen::MatrixXd dist = (-2.0 * frame.transpose() * frame).colwise() + sq;
    dist.rowwise() += sq.transpose();
    const double inv_n = 1.0 / static_cast<double>(n);
    double penalty = 0;
    for (index_type i = 0; i < n; ++i) {
        dist(i, i) = std::numeric_limits<double>::infinity();
        const double nearest = std::max(0.0, dist.col(i).minCoeff());
        penalty -= nearest * inv_n;
        // Tied neighbours share the subgradient equally, so an exact ETF gets a
        // purely radial gradient.
        const double tol = 1e-12 * std::max(1.0, nearest);
        std::vector<index_type> tied;
        for (index_type j = 0; j < n; ++j) {
            if (j != i && dist(j, i) <= nearest + tol) tied.push_back(j);
        }
        const double share = -2.0 * inv_n / static_cast<double>(tied.size());
        for (const index_type j : tied) {
            const Eigen::VectorXd diff = frame.col(i) - frame.col(j);
            r.gradient.col(i) += share * diff;
            r.gradient.col(j) -= share * diff;
        }
    }
    for (index_type i = 0; i < n; ++i) {
        penalty += (sq(i) - 1.0) * (sq(i) - 1.0);
        r.gradient.col(i) += 4.0 * (sq(i) - 1.0) * frame.col(i);
    }
    r.penalty = strength * penalty;
    r.gradient *= strength;
    return r;
}

namespace {

template <class Derived>
void write_values(std::ostream& out, const Eigen::DenseBase<Derived>& m)
{
    for (index_type c = 0; c < m.cols(); ++c) {
        for (index_type r = 0; r < m.rows(); ++r) le::write_f64(out, m(r, c));
    }
}

template <class Derived>
void read_values(std::istream& in, Eigen::DenseBase<Derived>& m)
{
    for (index_type c = 0; c < m.cols(); ++c) {
        for (index_type r = 0; r < m.rows(); ++r) m(r, c) = le::read_f64(in);
    }
}

} // namespace

void write_head(std::ostream& out, const HeadParams& params)
{
    params.validate();
    out.write("DGH1", 4);
    le::write_u32(out, static_cast<std::uint32_t>(params.input_dim()));
    le::write_u32(out, static_cast<std::uint32_t>(params.output_dim()));
    le::write_u32(out, static_cast<std::uint32_t>(params.num_foreground()));
    le::write_u32(out, static_cast<std::uint32_t>(params.num_background_centers));
    out.put(params.margins.learnable ? 1 : 0);
    out.put(params.trainable_classifier ? 1 : 0);
    write_values(out, params.frame.vectors());
    write_values(out, params.projector_weight);
    write_values(out, params.projector_bias);
    write_values(out, params.margins.margins);
}

HeadParams read_head(std::istream& in)
{
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), 4) || std::memcmp(magic.data(), "DGH1", 4) != 0) {
        throw format_error("head checkpoint: bad magic (expected DGH1)");
    }
    const index_type d_in = le::read_u32(in);
    const index_type d_out = le::read_u32(in);
    const index_type nf = le::read_u32(in);
    const index_type nb = le::read_u32(in);
    const int learnable = in.get();
    const int trainable = in.get();
    if (!in || learnable < 0 || learnable > 1 || trainable < 0 || trainable > 1) {
        throw format_error("head checkpoint: bad flags");
    }
    if (d_in == 0 || d_out == 0 || nf == 0 || nb == 0) throw format_error("head checkpoint: zero dimension");

    HeadParams p;
    Eigen::MatrixXd frame(d_out, nf + nb);
    read_values(in, frame);
    p.frame = Frame<double>(std::move(frame));
    p.projector_weight.resize(d_in, d_out);
    read_values(in, p.projector_weight);
    p.projector_bias.resize(d_out);
    read_values(in, p.projector_bias);
    p.margins.margins.resize(nf + 1);
    read_values(in, p.margins.margins);
    p.margins.learnable = learnable == 1;
    p.trainable_classifier = trainable == 1;
    p.num_background_centers = nb;
    if (in.peek() != std::char_traits<char>::eof()) throw format_error("head checkpoint: trailing bytes");
    p.validate();
    return p;
}

void save_head(const std::filesystem::path& path, const HeadParams& params)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw format_error("cannot open " + path.string() + " for writing");
    write_head(out, params);
    if (!out) throw format_error("write failed: " + path.string());
}

HeadParams load_head(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("cannot open " + path.string());
    return read_head(in);
}

void write_margins_csv(std::ostream& out, const MarginVector& margins)
{
    out << "slot,margin\n";
    for (index_type c = 0; c < margins.margins.size(); ++c) {
        out << c << ',' << format_double(margins.margins(c)) << '\n';
    }
}

} // namespace digeo
