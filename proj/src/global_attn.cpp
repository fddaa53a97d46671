#include "tody/global_attn.hpp"

#include <algorithm>
#include <cmath>

#include "tody/errors.hpp"

namespace tody {

template <typename T>
TransformerParams<T> TransformerParams<T>::make(ParamSet<T>& ps, const std::string& name, std::int64_t width,
                                                int heads, int num_layers, Rng& rng) {
  if (heads < 1 || width % heads != 0) {
    throw ConfigError("attention heads (" + std::to_string(heads) + ") must divide the width (" +
                      std::to_string(width) + ")");
  }
  TransformerParams p;
  p.width = width;
  p.key_width = width;
  p.heads = heads;
  for (int l = 0; l < num_layers; ++l) {
    const std::string pre = name + ".layer" + std::to_string(l);
    AttentionLayerParams<T> lp;
    lp.ln1_gain = ps.add(pre + ".ln1.gain", {width}, Init::kOnes, rng);
    lp.ln1_bias = ps.add(pre + ".ln1.bias", {width}, Init::kZeros, rng);
    lp.wq = ps.add(pre + ".wq", {width, p.key_width}, Init::kFanIn, rng);
    lp.wk = ps.add(pre + ".wk", {width, p.key_width}, Init::kFanIn, rng);
    lp.wv = ps.add(pre + ".wv", {width, width}, Init::kFanIn, rng);
    lp.wo = ps.add(pre + ".wo", {width, width}, Init::kFanIn, rng);
    lp.bo = ps.add(pre + ".bo", {width}, Init::kZeros, rng);
    lp.ln2_gain = ps.add(pre + ".ln2.gain", {width}, Init::kOnes, rng);
    lp.ln2_bias = ps.add(pre + ".ln2.bias", {width}, Init::kZeros, rng);
    lp.w1 = ps.add(pre + ".ffn.w1", {width, 2 * width}, Init::kFanIn, rng);
    lp.b1 = ps.add(pre + ".ffn.b1", {2 * width}, Init::kZeros, rng);
    lp.w2 = ps.add(pre + ".ffn.w2", {2 * width, width}, Init::kFanIn, rng);
    lp.b2 = ps.add(pre + ".ffn.b2", {width}, Init::kZeros, rng);
    p.layers.push_back(lp);
  }
  p.lnf_gain = ps.add(name + ".lnf.gain", {width}, Init::kOnes, rng);
  p.lnf_bias = ps.add(name + ".lnf.bias", {width}, Init::kZeros, rng);
  return p;
}

Mask causal_mask(int num_slots, std::span<const unsigned char> occupancy_row) {
  if (static_cast<int>(occupancy_row.size()) != num_slots) {
    throw ShapeError("causal_mask: occupancy row of " + std::to_string(occupancy_row.size()) + " for " +
                     std::to_string(num_slots) + " slots");
  }
  const auto m = static_cast<std::size_t>(num_slots);
  Mask mask(m * m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j <= i; ++j) mask[i * m + j] = occupancy_row[j] ? 1 : 0;
  }
  return mask;
}

namespace {

// Causal masks of all packed rows, [N, M, M]; every head reuses it.
Mask batch_mask(const TokenLayout& l) {
  const auto m = static_cast<std::size_t>(l.num_patches);
  Mask out;
  out.reserve(static_cast<std::size_t>(l.num_rows()) * m * m);
  for (std::int64_t r = 0; r < l.num_rows(); ++r) {
    const Mask row = causal_mask(l.num_patches, std::span(l.occupancy).subspan(static_cast<std::size_t>(r) * m, m));
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

// One layer; optionally exposes the attention weights of each head.
template <typename T>
Tensor<T> attention_layer(const Tensor<T>& x, const Mask& mask, const AttentionLayerParams<T>& lp, std::int64_t n,
                          std::int64_t m, std::int64_t d, std::int64_t dk, int heads,
                          std::vector<Tensor<T>>* weights_out) {
  const std::int64_t hk = dk / heads;
  const std::int64_t hv = d / heads;
  const Tensor<T> y = ops::layer_norm(x, lp.ln1_gain, lp.ln1_bias);
  const Tensor<T> q = ops::matmul(y, lp.wq);
  const Tensor<T> k = ops::matmul(y, lp.wk);
  const Tensor<T> v = ops::matmul(y, lp.wv);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hk));
  std::vector<Tensor<T>> head_out;
  for (int h = 0; h < heads; ++h) {
    const Tensor<T> qh = ops::reshape(ops::slice_cols(q, h * hk, (h + 1) * hk), {n, m, hk});
    const Tensor<T> kh = ops::reshape(ops::slice_cols(k, h * hk, (h + 1) * hk), {n, m, hk});
    const Tensor<T> vh = ops::reshape(ops::slice_cols(v, h * hv, (h + 1) * hv), {n, m, hv});
    const Tensor<T> scores = ops::scale(ops::bmm(qh, kh, true), inv_sqrt);
    const Tensor<T> attn = ops::masked_softmax(scores, mask);
    if (weights_out) weights_out->push_back(attn);
    head_out.push_back(ops::reshape(ops::bmm(attn, vh, false), {n * m, hv}));
  }
  const Tensor<T> msa = heads == 1 ? head_out[0] : ops::concat(head_out);
  Tensor<T> out = ops::add(x, ops::add(ops::matmul(msa, lp.wo), lp.bo));
  const Tensor<T> z = ops::layer_norm(out, lp.ln2_gain, lp.ln2_bias);
  const Tensor<T> ffn = ops::add(ops::matmul(ops::relu(ops::add(ops::matmul(z, lp.w1), lp.b1)), lp.w2), lp.b2);
  return ops::add(out, ffn);
}

constexpr std::int64_t kAttendSlots = 1 << 16;

template <typename T>
Tensor<T> run_stack(Tensor<T> x, const Mask& mask, const TransformerParams<T>& params, std::int64_t n, std::int64_t m,
                    std::int64_t d) {
  for (const auto& lp : params.layers) {
    x = attention_layer<T>(x, mask, lp, n, m, d, params.key_width, params.heads, nullptr);
  }
  return ops::layer_norm(x, params.lnf_gain, params.lnf_bias);
}

}  // namespace

template <typename T>
PackedSequences<T> attend(const PackedSequences<T>& packed, const TransformerParams<T>& params) {
  const TokenLayout& l = *packed.layout;
  const std::int64_t n = l.num_rows();
  const std::int64_t m = l.num_patches;
  const std::int64_t d = packed.width();
  if (d != params.width) {
    throw ShapeError("attend: token width " + std::to_string(d) + " but transformer width " + std::to_string(params.width));
  }
  const Mask mask = batch_mask(l);
  Tensor<T> x = ops::reshape(packed.tokens, {n * m, d});
  // Sequences are independent; large batches go through in cache-sized groups.
  const std::int64_t group = std::max<std::int64_t>(1, kAttendSlots / (m * d));
  if (n <= group) {
    x = run_stack(x, mask, params, n, m, d);
  } else {
    std::vector<Tensor<T>> parts;
    for (std::int64_t r0 = 0; r0 < n; r0 += group) {
      const std::int64_t r1 = std::min(n, r0 + group);
      std::vector<std::int64_t> rows(static_cast<std::size_t>((r1 - r0) * m));
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = r0 * m + static_cast<std::int64_t>(i);
      const Mask sub(mask.begin() + r0 * m * m, mask.begin() + r1 * m * m);
      parts.push_back(run_stack(ops::gather_rows(x, rows), sub, params, r1 - r0, m, d));
    }
    x = ops::concat_rows(parts);
  }
  PackedSequences<T> out = packed;
  out.tokens = ops::reshape(x, {n, m, d});
  return out;
}

template <typename T>
std::vector<T> attention_weights(const PackedSequences<T>& packed, const TransformerParams<T>& params, int layer) {
  const TokenLayout& l = *packed.layout;
  const std::int64_t n = l.num_rows(), m = l.num_patches, d = packed.width();
  const Mask mask = batch_mask(l);
  NoGrad<T> no_grad;
  Tensor<T> x = ops::reshape(packed.tokens, {n * m, d});
  for (int i = 0; i <= layer; ++i) {
    std::vector<Tensor<T>> w;
    const Tensor<T> next = attention_layer<T>(x, mask, params.layers.at(static_cast<std::size_t>(i)), n, m, d,
                                           params.key_width, params.heads, &w);
    if (i == layer) {
      // Reorder [head][N, M, M] into [N, head, M, M].
      std::vector<T> out(static_cast<std::size_t>(n * params.heads * m * m));
      for (int h = 0; h < params.heads; ++h) {
        const auto src = w[static_cast<std::size_t>(h)].data();
        for (std::int64_t r = 0; r < n; ++r) {
          std::copy_n(src.begin() + r * m * m, m * m, out.begin() + (r * params.heads + h) * m * m);
        }
      }
      return out;
    }
    x = next;
  }
  return {};
}

#define TODY_INSTANTIATE_ATTN(T)                                                                        \
  template struct TransformerParams<T>;                                                                 \
  template PackedSequences<T> attend(const PackedSequences<T>&, const TransformerParams<T>&);           \
  template std::vector<T> attention_weights(const PackedSequences<T>&, const TransformerParams<T>&, int);

TODY_INSTANTIATE_ATTN(float)
TODY_INSTANTIATE_ATTN(double)

}  // namespace tody
