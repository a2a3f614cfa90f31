#pragma once
#include <Eigen/Core>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <digeo/etf_frame.hpp>
#include <digeo/margin_losses.hpp>

namespace digeo {

/// Affine projector followed by a classifier frame.
///
/// Logit layout: one logit per foreground class, then a single background
/// logit which is the max over the `num_background_centers` trailing frame
/// columns. Margins follow the same layout.
struct HeadParams
{
    Eigen::MatrixXd projector_weight; // input_dim x output_dim
    Eigen::VectorXd projector_bias;   // output_dim
    Frame<double> frame;              // output_dim x (num_foreground + num_background_centers)
    MarginVector margins;             // num_foreground + 1
    index_type num_background_centers = 1;
    // Fixed-frame heads never update the frame; learnable ones are the
    // conventional linear-classifier baselines.
    bool trainable_classifier = false;

    index_type input_dim() const { return projector_weight.rows(); }
    index_type output_dim() const { return projector_weight.cols(); }
    index_type num_foreground() const { return frame.num_classes() - num_background_centers; }
    index_type num_logits() const { return num_foreground() + 1; }
    index_type background_index() const { return num_foreground(); }

    void validate() const;
};

struct ForwardRecord
{
    Eigen::VectorXd input;
    Eigen::VectorXd projected;
    Eigen::VectorXd logits;
    Eigen::VectorXd background_slot_logits;
    index_type background_slot = 0; // argmax among the background slots
};

struct BatchRecord
{
    Eigen::MatrixXd input;       // input_dim x B
    Eigen::MatrixXd projected;   // output_dim x B
    Eigen::MatrixXd slot_logits; // frame columns x B
    Eigen::MatrixXd logits;      // num_logits x B
    std::vector<index_type> background_slot;

    index_type batch_size() const { return input.cols(); }
};

struct HeadGradients
{
    Eigen::MatrixXd projector_weight;
    Eigen::VectorXd projector_bias;
    Eigen::MatrixXd frame; // identically zero unless the classifier is trainable
    Eigen::VectorXd margins;

    static HeadGradients zeros_like(const HeadParams& params);
    HeadGradients& operator*=(double s);
};

ForwardRecord head_forward(const HeadParams& params, const Eigen::Ref<const Eigen::VectorXd>& feature);

/// Gradients of a scalar loss given d loss / d logits for the record's sample.
/// The margins entry is left at zero; margin gradients come from the loss.
HeadGradients head_backward(const HeadParams& params, const ForwardRecord& record,
                            const Eigen::Ref<const Eigen::VectorXd>& d_logits);

/// Column-per-sample batch variants; backward sums over the batch.
BatchRecord head_forward_batch(const HeadParams& params, const Eigen::Ref<const Eigen::MatrixXd>& inputs);
HeadGradients head_backward_batch(const HeadParams& params, const BatchRecord& record,
                                  const Eigen::Ref<const Eigen::MatrixXd>& d_logits);

struct SgdConfig
{
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
};

/// Momentum buffers; empty until the first step.
struct SgdState
{
    Eigen::MatrixXd projector_weight;
    Eigen::VectorXd projector_bias;
    Eigen::MatrixXd frame;
    Eigen::VectorXd margins;
};

/// v <- momentum * v + (g + weight_decay * p); p <- p - lr * v.
/// Weight decay applies to the projector and a trainable classifier, not to
/// margins. Margins move only when learnable; a fixed frame never moves.
void sgd_step(HeadParams& params, const HeadGradients& grads, const SgdConfig& config,
              SgdState& state);

struct RegularizerResult
{
    double penalty = 0;
    Eigen::MatrixXd gradient;
};

/// Online separation penalty for a learnable classifier:
/// strength * ( -mean_i min_{j != i} |w_i - w_j|^2 + sum_i (|w_i|^2 - 1)^2 ).
/// The gradient is exact wherever each nearest neighbour is unique; ties
/// split the subgradient evenly among the tied neighbours.
RegularizerResult online_etf_regularizer(const Eigen::Ref<const Eigen::MatrixXd>& frame, double strength);

// Checkpoint layout (little-endian): "DGH1", u32 input_dim, u32 output_dim,
// u32 num_foreground, u32 num_background_centers, u8 margins_learnable,
// u8 trainable_classifier, then float64 column-major frame, projector
// weight, projector bias, margins.
void write_head(std::ostream& out, const HeadParams& params);
HeadParams read_head(std::istream& in);
void save_head(const std::filesystem::path& path, const HeadParams& params);
HeadParams load_head(const std::filesystem::path& path);

/// CSV columns: slot, margin.
void write_margins_csv(std::ostream& out, const MarginVector& margins);

} // namespace digeo
