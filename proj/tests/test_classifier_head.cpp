#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/QR>
#include <sstream>

#include <digeo/classifier_head.hpp>
#include <digeo/rng.hpp>

#include "oracles.hpp"

using namespace digeo;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd gaussian(Rng& rng, index_type r, index_type c, double scale = 1.0)
{
    MatrixXd m(r, c);
    for (index_type j = 0; j < c; ++j)
        for (index_type i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
    return m;
}

HeadParams make_head(index_type d_in, index_type d_out, index_type nf, index_type nb, std::uint64_t seed)
{
    Rng rng(seed);
    HeadParams p;
    p.projector_weight = gaussian(rng, d_in, d_out, 1.0 / std::sqrt(static_cast<double>(d_in)));
    p.projector_bias = gaussian(rng, d_out, 1, 0.1);
    p.frame = etf_closed_form<double>(nf + nb, d_out, seed);
    p.num_background_centers = nb;
    p.margins.margins = gaussian(rng, nf + 1, 1);
    p.margins.learnable = true;
    return p;
}

/// Flattened (projector, bias, margins) for finite differences.
VectorXd flatten(const HeadParams& p)
{
    VectorXd x(p.projector_weight.size() + p.projector_bias.size() + p.margins.margins.size());
    x << p.projector_weight.reshaped(), p.projector_bias, p.margins.margins;
    return x;
}

HeadParams unflatten(HeadParams p, const VectorXd& x)
{
    const auto nw = p.projector_weight.size();
    const auto nb = p.projector_bias.size();
    p.projector_weight.reshaped() = x.head(nw);
    p.projector_bias = x.segment(nw, nb);
    p.margins.margins = x.tail(p.margins.margins.size());
    return p;
}

/// Composed loss computed without the library's backward pass: affine map,
/// frame inner products, max over background slots, margin cross-entropy.
double oracle_loss(const HeadParams& p, const VectorXd& x, std::size_t label)
{
    const VectorXd z = p.projector_weight.transpose() * x + p.projector_bias;
    const VectorXd slots = p.frame.vectors().transpose() * z;
    const auto nf = p.num_foreground();
    std::vector<double> v(static_cast<std::size_t>(nf + 1));
    for (index_type c = 0; c < nf; ++c) v[static_cast<std::size_t>(c)] = slots(c);
    v.back() = slots.tail(p.num_background_centers).maxCoeff();
    const VectorXd& m = p.margins.margins;
    return oracle::margin_ce(v, {m.data(), m.data() + m.size()}, label);
}

VectorXd analytic_gradient(const HeadParams& p, const VectorXd& x, index_type label)
{
    const auto rec = head_forward(p, x);
    const auto lg = prior_margin_ce_grad(rec.logits, label, p.margins.margins);
    auto g = head_backward(p, rec, lg.d_logits);
    g.margins = lg.d_margins;
    VectorXd out(g.projector_weight.size() + g.projector_bias.size() + g.margins.size());
    out << g.projector_weight.reshaped(), g.projector_bias, g.margins;
    return out;
}

} // namespace

TEST_CASE("forward: identity projector maps a frame column to its ETF logits")
{
    const index_type n = 6;
    HeadParams p;
    p.projector_weight = MatrixXd::Identity(n - 1, n - 1);
    p.projector_bias = VectorXd::Zero(n - 1);
    p.frame = etf_closed_form<double>(n, n - 1, 2);
    p.margins.margins = VectorXd::Zero(n);
    for (index_type c = 0; c < n - 1; ++c) {
        const auto rec = head_forward(p, p.frame.column(c));
        for (index_type k = 0; k < n - 1; ++k) {
            CHECK(rec.logits(k) == doctest::Approx(k == c ? 1.0 : -1.0 / (n - 1)).epsilon(1e-12));
        }
    }
    CHECK(head_forward(p, VectorXd::Zero(n - 1)).logits.isZero(0.0));
}

TEST_CASE("forward: zero feature gives bias terms")
{
    auto p = make_head(4, 6, 3, 2, 1);
    const auto rec = head_forward(p, VectorXd::Zero(4));
    const VectorXd slots = p.frame.vectors().transpose() * p.projector_bias;
    CHECK(rec.logits.head(3).isApprox(slots.head(3)));
    CHECK(rec.logits(3) == slots.tail(2).maxCoeff());
}

TEST_CASE("forward: background logit is the max over its slots")
{
    HeadParams p;
    p.projector_weight = MatrixXd::Identity(4, 4);
    p.projector_bias = VectorXd::Zero(4);
    p.num_background_centers = 3;
    p.frame = Frame<double>(MatrixXd::Identity(4, 4));
    p.margins.margins = VectorXd::Zero(2);
    const auto rec = head_forward(p, VectorXd{{0.2, 0.1, 0.7, 0.3}});
    CHECK(rec.logits.size() == 2);
    CHECK(rec.logits(1) == 0.7);
    CHECK(rec.background_slot == 1);
    CHECK(rec.background_slot_logits == VectorXd{{0.1, 0.7, 0.3}});
}

TEST_CASE("forward: dimension errors")
{
    auto p = make_head(4, 6, 3, 1, 1);
    CHECK_THROWS_AS(head_forward(p, VectorXd::Zero(5)), dimension_error);
    p.margins.margins = VectorXd::Zero(3);
    CHECK_THROWS_AS(p.validate(), dimension_error);
}

TEST_CASE("backward: zero upstream gradient gives zero gradients")
{
    const auto p = make_head(5, 6, 3, 2, 4);
    const auto rec = head_forward(p, VectorXd::Ones(5));
    const auto g = head_backward(p, rec, VectorXd::Zero(4));
    CHECK(g.projector_weight.isZero(0.0));
    CHECK(g.projector_bias.isZero(0.0));
    CHECK(g.frame.isZero(0.0));
}

TEST_CASE("backward: single-class upstream gradient is an outer product")
{
    HeadParams p;
    p.projector_weight = MatrixXd::Identity(4, 4);
    p.projector_bias = VectorXd::Zero(4);
    p.frame = etf_closed_form<double>(5, 4, 8);
    p.margins.margins = VectorXd::Zero(5);
    const VectorXd x{{0.3, -1.0, 0.5, 2.0}};
    VectorXd up = VectorXd::Zero(5);
    up(2) = 0.7;
    const auto g = head_backward(p, head_forward(p, x), up);
    const MatrixXd expected = x * (0.7 * p.frame.column(2)).transpose();
    CHECK((g.projector_weight - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("full-head gradient matches central differences")
{
    Rng rng(10);
    for (auto [nf, nb] : {std::pair<index_type, index_type>{2, 1}, {20, 1}, {80, 1}, {20, 3}}) {
        for (int trial = 0; trial < 10; ++trial) {
            const auto seed = static_cast<std::uint64_t>(trial + 100 * nf + nb);
            const index_type d_in = 6, d_out = nf + nb + 1;
            const auto p = make_head(d_in, d_out, nf, nb, seed);
            const VectorXd x = gaussian(rng, d_in, 1);
            const auto label = static_cast<index_type>(rng.below(static_cast<std::uint64_t>(nf + 1)));
            const auto f = [&](const VectorXd& theta) {
                return oracle_loss(unflatten(p, theta), x, static_cast<std::size_t>(label));
            };
            INFO("nf = " << nf << ", nb = " << nb << ", trial " << trial);
            CHECK(oracle::rel_error(analytic_gradient(p, x, label), oracle::central_diff(f, flatten(p), 1e-6)) <= 1e-5);
        }
    }
}

TEST_CASE("batch backward sums per-sample gradients")
{
    const auto p = make_head(5, 8, 4, 2, 3);
    Rng rng(3);
    const MatrixXd x = gaussian(rng, 5, 7);
    const MatrixXd up = gaussian(rng, 5, 7);
    const auto batch = head_backward_batch(p, head_forward_batch(p, x), up);
    auto sum = HeadGradients::zeros_like(p);
    for (index_type b = 0; b < 7; ++b) {
        const auto g = head_backward(p, head_forward(p, x.col(b)), up.col(b));
        sum.projector_weight += g.projector_weight;
        sum.projector_bias += g.projector_bias;
    }
    CHECK(batch.projector_weight.isApprox(sum.projector_weight, 1e-12));
    CHECK(batch.projector_bias.isApprox(sum.projector_bias, 1e-12));
}

TEST_CASE("logits are invariant to a joint rotation of features and frame")
{
    Rng rng(6);
    const auto p = make_head(5, 9, 6, 2, 6);
    const Eigen::HouseholderQR<MatrixXd> qr(gaussian(rng, 9, 9));
    const MatrixXd q = qr.householderQ();
    HeadParams r = p;
    r.projector_weight = p.projector_weight * q.transpose();
    r.projector_bias = q * p.projector_bias;
    r.frame = Frame<double>(q * p.frame.vectors());
    for (int trial = 0; trial < 20; ++trial) {
        const VectorXd x = gaussian(rng, 5, 1);
        CHECK((head_forward(p, x).logits - head_forward(r, x).logits).cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("one background center matches the plain frame path")
{
    const auto p = make_head(5, 7, 4, 1, 2);
    Rng rng(2);
    const VectorXd x = gaussian(rng, 5, 1);
    const auto rec = head_forward(p, x);
    const VectorXd plain = p.frame.vectors().transpose() * (p.projector_weight.transpose() * x + p.projector_bias);
    CHECK(rec.logits == plain);
    CHECK(rec.background_slot == 0);
}

TEST_CASE("sgd_step")
{
    SUBCASE("zero gradient and no decay leaves params unchanged")
    {
        auto p = make_head(3, 4, 2, 1, 1);
        const auto before = p;
        SgdState state;
        sgd_step(p, HeadGradients::zeros_like(p), SgdConfig{0.5, 0.9, 0.0}, state);
        CHECK(p.projector_weight == before.projector_weight);
        CHECK(p.margins.margins == before.margins.margins);
    }
    SUBCASE("plain step subtracts the gradient")
    {
        auto p = make_head(3, 4, 2, 1, 1);
        const auto before = p;
        auto g = HeadGradients::zeros_like(p);
        g.projector_weight.setConstant(0.25);
        g.margins.setConstant(-1.0);
        SgdState state;
        sgd_step(p, g, SgdConfig{1.0, 0.0, 0.0}, state);
        CHECK(p.projector_weight == (before.projector_weight.array() - 0.25).matrix());
        CHECK(p.margins.margins == (before.margins.margins.array() + 1.0).matrix());
    }
    SUBCASE("two momentum steps match a hand-rolled reference")
    {
        auto p = make_head(3, 4, 2, 1, 5);
        Rng rng(5);
        const SgdConfig cfg{0.05, 0.9, 1e-3};
        const MatrixXd w0 = p.projector_weight;
        const VectorXd b0 = p.projector_bias;
        const VectorXd m0 = p.margins.margins;
        std::vector<HeadGradients> gs(2, HeadGradients::zeros_like(p));
        for (auto& g : gs) {
            g.projector_weight = gaussian(rng, 3, 4);
            g.projector_bias = gaussian(rng, 4, 1);
            g.margins = gaussian(rng, 3, 1);
        }
        SgdState state;
        sgd_step(p, gs[0], cfg, state);
        sgd_step(p, gs[1], cfg, state);

        // Reference: buf_1 = g_1 + wd p_0; p_1 = p_0 - lr buf_1;
        //            buf_2 = mu buf_1 + g_2 + wd p_1; p_2 = p_1 - lr buf_2.
        for (index_type i = 0; i < w0.size(); ++i) {
            const double p0 = w0.data()[i];
            const double buf1 = gs[0].projector_weight.data()[i] + cfg.weight_decay * p0;
            const double p1 = p0 - cfg.learning_rate * buf1;
            const double buf2 = cfg.momentum * buf1 + gs[1].projector_weight.data()[i] + cfg.weight_decay * p1;
            CHECK(std::abs(p.projector_weight.data()[i] - (p1 - cfg.learning_rate * buf2)) <= 1e-12);
        }
        // Bias and margins are not decayed.
        for (index_type i = 0; i < b0.size(); ++i) {
            const double buf1 = gs[0].projector_bias(i);
            const double buf2 = cfg.momentum * buf1 + gs[1].projector_bias(i);
            CHECK(std::abs(p.projector_bias(i) - (b0(i) - cfg.learning_rate * (buf1 + buf2))) <= 1e-12);
        }
        for (index_type i = 0; i < m0.size(); ++i) {
            const double buf1 = gs[0].margins(i);
            const double buf2 = cfg.momentum * buf1 + gs[1].margins(i);
            CHECK(std::abs(p.margins.margins(i) - (m0(i) - cfg.learning_rate * (buf1 + buf2))) <= 1e-12);
        }
    }
    SUBCASE("fixed frame and fixed margins never move")
    {
        auto p = make_head(3, 4, 2, 1, 7);
        p.margins.learnable = false;
        const auto before = p;
        Rng rng(7);
        SgdState state;
        for (int step = 0; step < 100; ++step) {
            auto g = HeadGradients::zeros_like(p);
            g.frame = gaussian(rng, 4, 3);
            g.margins = gaussian(rng, 3, 1);
            g.projector_weight = gaussian(rng, 3, 4);
            sgd_step(p, g, SgdConfig{0.1, 0.9, 5e-4}, state);
        }
        CHECK(p.frame == before.frame);
        CHECK(p.margins.margins == before.margins.margins);
        CHECK_FALSE(p.projector_weight == before.projector_weight);
    }
    SUBCASE("trainable classifier moves and decays")
    {
        auto p = make_head(3, 4, 2, 1, 7);
        p.trainable_classifier = true;
        const MatrixXd w0 = p.frame.vectors();
        SgdState state;
        sgd_step(p, HeadGradients::zeros_like(p), SgdConfig{1.0, 0.0, 0.5}, state);
        CHECK(p.frame.vectors().isApprox(0.5 * w0));
    }
}

TEST_CASE("online separation regularizer")
{
    SUBCASE("antipodal pair")
    {
        const MatrixXd w{{1.0, -1.0}};
        CHECK(online_etf_regularizer(w, 1.0).penalty == doctest::Approx(-4.0));
        CHECK(online_etf_regularizer(w, 0.5).penalty == doctest::Approx(-2.0));
    }
    SUBCASE("ETF gradient is radial")
    {
        const MatrixXd w = etf_closed_form<double>(5, 4, 1).vectors();
        const auto r = online_etf_regularizer(w, 1.0);
        for (index_type i = 0; i < 5; ++i) {
            const VectorXd g = r.gradient.col(i);
            const VectorXd tangent = g - g.dot(w.col(i)) * w.col(i);
            CHECK(tangent.norm() < 1e-12);
        }
    }
    SUBCASE("gradient matches central differences")
    {
        Rng rng(12);
        const MatrixXd w = gaussian(rng, 3, 5);
        const auto r = online_etf_regularizer(w, 0.7);
        const auto f = [&](const VectorXd& x) {
            return online_etf_regularizer(x.reshaped(3, 5), 0.7).penalty;
        };
        const VectorXd flat = w.reshaped();
        CHECK(oracle::rel_error(r.gradient.reshaped(), oracle::central_diff(f, flat, 1e-6)) <= 1e-6);
    }
    SUBCASE("online descent recovers the planar ETF")
    {
        Rng rng(13);
        MatrixXd w = gaussian(rng, 2, 3);
        for (int step = 0; step < 5000; ++step) w -= 0.01 * online_etf_regularizer(w, 1.0).gradient;
        const auto cos = pairwise_cosine(Frame<double>(w));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                if (i != j) CHECK(std::abs(cos(i, j) + 0.5) <= 5e-2);
    }
}

TEST_CASE("head checkpoint round trip")
{
    auto p = make_head(5, 7, 4, 2, 21);
    p.trainable_classifier = true;
    std::stringstream buf;
    write_head(buf, p);
    const auto q = read_head(buf);
    CHECK(q.projector_weight == p.projector_weight);
    CHECK(q.projector_bias == p.projector_bias);
    CHECK(q.frame == p.frame);
    CHECK(q.margins.margins == p.margins.margins);
    CHECK(q.margins.learnable);
    CHECK(q.trainable_classifier);
    CHECK(q.num_background_centers == 2);

    std::stringstream bad("DGH2");
    CHECK_THROWS_AS(read_head(bad), format_error);
    std::stringstream truncated(buf.str().substr(0, 40));
    CHECK_THROWS_AS(read_head(truncated), format_error);

    std::ostringstream csv;
    p.margins.margins = VectorXd{{0.5, 2.0, 0.25, 1.0, 3.0}};
    write_margins_csv(csv, p.margins);
    CHECK(csv.str() == "slot,margin\n0,0.5\n1,2\n2,0.25\n3,1\n4,3\n");
}
