#pragma once

// Task heads, losses and ranking metrics.
//
// FLP: p(u, v) = sigmoid(W2 relu(W1 [h_u | h_v] + b1) + b2)
// DNC: logits(u) = W2 relu(W1 h_u + b1) + b2

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tody/params.hpp"
#include "tody/tensor.hpp"

namespace tody {

enum class Task { kFlp, kDnc };
Task parse_task(const std::string& s);
std::string to_string(Task t);

template <typename T>
struct FlpDecoderParams {
  Linear<T> hidden;  // [2D, D]
  Linear<T> out;     // [D, 1]
  static FlpDecoderParams make(ParamSet<T>& ps, const std::string& name, std::int64_t width, Rng& rng);
};

template <typename T>
struct DncDecoderParams {
  Linear<T> hidden;  // [D, D]
  Linear<T> out;     // [D, C]
  int num_classes = 0;
  static DncDecoderParams make(ParamSet<T>& ps, const std::string& name, std::int64_t width, int num_classes,
                               Rng& rng);
};

// Probabilities [B] for the pairs (h_u[i], h_v[i]); h_u and h_v are [B, D].
template <typename T>
Tensor<T> flp_score(const Tensor<T>& h_u, const Tensor<T>& h_v, const FlpDecoderParams<T>& params);

// Class logits [B, C].
template <typename T>
Tensor<T> dnc_logits(const Tensor<T>& h, const DncDecoderParams<T>& params);

// Scalar losses for a single example, evaluated in double.
double bce_value(int y, double p, double eps = 1e-7);
double ce_value(int y, std::span<const double> logits);

// Metrics. AP/AUC need at least one positive and one negative label;
// ties in AP are resolved by grouping equal scores into one threshold, in
// AUC by counting tied pairs as one half.
double average_precision(std::span<const double> scores, std::span<const int> labels);
double roc_auc(std::span<const double> scores, std::span<const int> labels);
// `neg` holds `pos.size()` consecutive groups of `negs_per_query` scores.
// rank = 1 + #(neg > pos), so ties favor the positive.
double mrr(std::span<const double> pos, std::span<const double> neg, std::size_t negs_per_query);
double accuracy(std::span<const int> predicted, std::span<const int> labels);

struct MetricRow {
  int epoch = 0;
  std::string split;
  std::string task;
  std::string metric;
  double value = 0;
  std::uint64_t seed = 0;
};

// CSV `epoch,split,task,metric,value,seed`; values printed with 17
// significant digits so the file round-trips exactly.
void write_metrics_csv(std::ostream& os, std::span<const MetricRow> rows);

}  // namespace tody
