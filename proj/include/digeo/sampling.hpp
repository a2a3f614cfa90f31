#pragma once
#include <cstdint>
#include <iosfwd>
#include <vector>

#include <digeo/margin_losses.hpp>

namespace digeo {

/// RFS thresholds: VOC / COCO scale and LVIS scale.
inline constexpr double kRfsThreshold = 0.01;
inline constexpr double kRfsThresholdLvis = 0.001;

/// Class ids annotated in each sample; a class may appear once per instance.
/// Background-only samples carry an empty list.
using SampleClasses = std::vector<std::vector<int>>;

struct FrequencyTable
{
    std::vector<std::size_t> instance_counts;
    std::vector<std::size_t> image_counts;
    std::size_t num_samples = 0;

    std::size_t num_classes() const { return instance_counts.size(); }
    /// Fraction of samples that contain class c.
    double image_frequency(std::size_t c) const;
};

FrequencyTable count_classes(const SampleClasses& samples, std::size_t num_classes);

/// max(1, sqrt(threshold / frequency)).
double class_repeat_factor(double frequency, double threshold);

struct RepeatPlan
{
    std::vector<double> repeat_factors;
    std::vector<std::size_t> copies;
    /// Materialized sample multiset in sample order.
    std::vector<std::size_t> indices;

    std::size_t size() const { return indices.size(); }
};

/// Per-sample repeat factor: the max class factor over the classes present.
std::vector<double> sample_repeat_factors(const SampleClasses& samples, std::size_t num_classes,
                                          double threshold);

/// Repeat factors plus a stochastic rounding of each factor
/// (floor(r) copies, one more with probability frac(r)).
RepeatPlan build_repeat_plan(const SampleClasses& samples, std::size_t num_classes,
                             double threshold, std::uint64_t seed);

/// Foreground priors proportional to instance counts, scaled to 1 - background_prob.
ClassPrior estimate_priors(const SampleClasses& samples, std::size_t num_classes,
                           double background_prob);

/// CSV columns: sample_index, repeat_factor, materialized_count.
void write_repeat_plan_csv(std::ostream& out, const RepeatPlan& plan);

} // namespace digeo
