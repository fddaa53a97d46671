#include "tody/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "tody/errors.hpp"

namespace tody {

Task parse_task(const std::string& s) {
  if (s == "flp" || s == "FLP") return Task::kFlp;
  if (s == "dnc" || s == "DNC") return Task::kDnc;
  throw ConfigError("unknown task '" + s + "' (expected flp or dnc)");
}

std::string to_string(Task t) { return t == Task::kFlp ? "flp" : "dnc"; }

template <typename T>
FlpDecoderParams<T> FlpDecoderParams<T>::make(ParamSet<T>& ps, const std::string& name, std::int64_t width,
                                              Rng& rng) {
  FlpDecoderParams p;
  p.hidden = Linear<T>::make(ps, name + ".hidden", 2 * width, width, rng);
  p.out = Linear<T>::make(ps, name + ".out", width, 1, rng);
  return p;
}

template <typename T>
DncDecoderParams<T> DncDecoderParams<T>::make(ParamSet<T>& ps, const std::string& name, std::int64_t width,
                                              int num_classes, Rng& rng) {
  if (num_classes < 2) throw DataError("node classification needs at least two classes");
  DncDecoderParams p;
  p.num_classes = num_classes;
  p.hidden = Linear<T>::make(ps, name + ".hidden", width, width, rng);
  p.out = Linear<T>::make(ps, name + ".out", width, num_classes, rng);
  return p;
}

template <typename T>
Tensor<T> flp_score(const Tensor<T>& h_u, const Tensor<T>& h_v, const FlpDecoderParams<T>& params) {
  if (h_u.rank() != 2 || h_u.shape() != h_v.shape()) {
    throw ShapeError("flp_score: endpoint embeddings " + shape_str(h_u.shape()) + " vs " + shape_str(h_v.shape()));
  }
  const Tensor<T> z = params.out(ops::relu(params.hidden(ops::concat<T>({h_u, h_v}))));
  return ops::sigmoid(ops::reshape(z, {h_u.dim(0)}));
}

template <typename T>
Tensor<T> dnc_logits(const Tensor<T>& h, const DncDecoderParams<T>& params) {
  return params.out(ops::relu(params.hidden(h)));
}

double bce_value(int y, double p, double eps) {
  const double q = std::clamp(p, eps, 1.0 - eps);
  return -(y * std::log(q) + (1 - y) * std::log(1.0 - q));
}

double ce_value(int y, std::span<const double> logits) {
  if (y < 0 || static_cast<std::size_t>(y) >= logits.size()) {
    throw ContractError("class index " + std::to_string(y) + " out of range for " + std::to_string(logits.size()) +
                        " classes");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0;
  for (double l : logits) s += std::exp(l - mx);
  return -(logits[static_cast<std::size_t>(y)] - mx - std::log(s));
}

namespace {

void check_binary(std::span<const double> scores, std::span<const int> labels, const char* what,
                  std::size_t& npos, std::size_t& nneg) {
  if (scores.size() != labels.size()) {
    throw ContractError(std::string(what) + ": " + std::to_string(scores.size()) + " scores but " +
                        std::to_string(labels.size()) + " labels");
  }
  npos = nneg = 0;
  for (int l : labels) {
    if (l == 1) {
      ++npos;
    } else if (l == 0) {
      ++nneg;
    } else {
      throw ContractError(std::string(what) + ": labels must be 0 or 1");
    }
  }
  if (npos == 0 || nneg == 0) {
    throw MetricError(std::string(what) + " is undefined with a single class (" + std::to_string(npos) +
                      " positives, " + std::to_string(nneg) + " negatives)");
  }
}

std::vector<std::size_t> order_by(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  std::size_t npos = 0, nneg = 0;
  check_binary(scores, labels, "average precision", npos, nneg);
  const auto idx = order_by(scores, true);
  double ap = 0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i, group_pos = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) group_pos += static_cast<std::size_t>(labels[idx[j++]]);
    tp += group_pos;
    seen += j - i;
    if (group_pos > 0) {
      ap += (static_cast<double>(tp) / static_cast<double>(seen)) *
            (static_cast<double>(group_pos) / static_cast<double>(npos));
    }
    i = j;
  }
  return ap;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  std::size_t npos = 0, nneg = 0;
  check_binary(scores, labels, "ROC AUC", npos, nneg);
  const auto idx = order_by(scores, false);
  // Count, for each positive, the negatives strictly below plus half the tied ones.
  double u = 0;
  std::size_t neg_below = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i, gp = 0, gn = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) (labels[idx[j++]] ? gp : gn)++;
    u += static_cast<double>(gp) * (static_cast<double>(neg_below) + 0.5 * static_cast<double>(gn));
    neg_below += gn;
    i = j;
  }
  return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

double mrr(std::span<const double> pos, std::span<const double> neg, std::size_t negs_per_query) {
  if (pos.empty()) throw MetricError("MRR is undefined without queries");
  if (negs_per_query == 0) throw MetricError("MRR needs at least one negative per query");
  if (neg.size() != pos.size() * negs_per_query) {
    throw ContractError("mrr: expected " + std::to_string(pos.size() * negs_per_query) + " negative scores, got " +
                        std::to_string(neg.size()));
  }
  double s = 0;
  for (std::size_t q = 0; q < pos.size(); ++q) {
    std::size_t above = 0;
    for (std::size_t k = 0; k < negs_per_query; ++k) above += neg[q * negs_per_query + k] > pos[q] ? 1 : 0;
    s += 1.0 / static_cast<double>(1 + above);
  }
  return s / static_cast<double>(pos.size());
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw ContractError("accuracy: size mismatch");
  if (labels.empty()) throw MetricError("accuracy is undefined on an empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

void write_metrics_csv(std::ostream& os, std::span<const MetricRow> rows) {
  os << "epoch,split,task,metric,value,seed\n";
  char buf[64];
  for (const MetricRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    os << r.epoch << ',' << r.split << ',' << r.task << ',' << r.metric << ',' << buf << ',' << r.seed << '\n';
  }
}

#define TODY_INSTANTIATE_TASKS(T)                                                                       \
  template struct FlpDecoderParams<T>;                                                                  \
  template struct DncDecoderParams<T>;                                                                  \
  template Tensor<T> flp_score(const Tensor<T>&, const Tensor<T>&, const FlpDecoderParams<T>&);         \
  template Tensor<T> dnc_logits(const Tensor<T>&, const DncDecoderParams<T>&);

TODY_INSTANTIATE_TASKS(float)
TODY_INSTANTIATE_TASKS(double)

}  // namespace tody
