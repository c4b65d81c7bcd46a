#include "insec/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "insec/rng.hpp"

namespace insec::lm {

namespace {

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using ConstMap = Eigen::Map<const Mat<Real>>;
template <typename Real>
using MutMap = Eigen::Map<Mat<Real>>;
template <typename Real>
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;
template <typename Real>
using ConstRowMap = Eigen::Map<const RowVec<Real>>;
template <typename Real>
using MutRowMap = Eigen::Map<RowVec<Real>>;
template <typename Real>
using AlignedVec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

constexpr double kLayerNormEps = 1e-5;

template <typename Real>
struct Weights {
  std::span<const Real> params;
  const ParamLayout* layout;

  [[nodiscard]] ConstMap<Real> mat(std::size_t offset) const {
    const auto& t = tensor_at(offset);
    return ConstMap<Real>(params.data() + offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
  }
  [[nodiscard]] ConstRowMap<Real> vec(std::size_t offset) const {
    const auto& t = tensor_at(offset);
    return ConstRowMap<Real>(params.data() + offset, static_cast<Eigen::Index>(t.size()));
  }
  [[nodiscard]] const TensorInfo& tensor_at(std::size_t offset) const {
    for (const auto& t : layout->tensors()) {
      if (t.offset == offset) return t;
    }
    throw std::logic_error("no tensor at offset");
  }
};

template <typename Real>
struct Grads {
  std::span<Real> grad;
  const ParamLayout* layout;

  [[nodiscard]] MutMap<Real> mat(std::size_t offset, const TensorInfo& t) const {
    return MutMap<Real>(grad.data() + offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
  }
  [[nodiscard]] MutRowMap<Real> vec(std::size_t offset, const TensorInfo& t) const {
    return MutRowMap<Real>(grad.data() + offset, static_cast<Eigen::Index>(t.size()));
  }
};

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// Tanh approximation. `th` keeps tanh(inner) for the backward pass.
template <typename Real>
void gelu_forward(const Mat<Real>& pre, Mat<Real>& th, Mat<Real>& act) {
  const auto u = pre.array();
  th = (static_cast<Real>(kGeluC) * (u + static_cast<Real>(kGeluA) * u.cube())).tanh().matrix();
  act = (static_cast<Real>(0.5) * u * (static_cast<Real>(1) + th.array())).matrix();
}

template <typename Real>
void gelu_backward(const Mat<Real>& pre, const Mat<Real>& th, const Mat<Real>& dact, Mat<Real>& dpre) {
  const auto u = pre.array();
  const auto t = th.array();
  const Real half = static_cast<Real>(0.5);
  dpre = (dact.array() * (half * (static_cast<Real>(1) + t) +
                          half * u * (static_cast<Real>(1) - t.square()) * static_cast<Real>(kGeluC) *
                              (static_cast<Real>(1) + static_cast<Real>(3 * kGeluA) * u.square())))
             .matrix();
}

// y = xhat * g + b, row by row. Stores xhat and 1/std for the backward pass.
template <typename Real>
void layer_norm(const Mat<Real>& x, const ConstRowMap<Real>& g, const ConstRowMap<Real>& b, Mat<Real>& xhat,
                std::vector<Real>& rstd, Mat<Real>& y) {
  const auto n = x.rows();
  const auto d = x.cols();
  xhat.resize(n, d);
  y.resize(n, d);
  rstd.resize(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    const Real mean = x.row(r).mean();
    const Real var = (x.row(r).array() - mean).square().mean();
    const Real rs = static_cast<Real>(1) / std::sqrt(var + static_cast<Real>(kLayerNormEps));
    rstd[static_cast<std::size_t>(r)] = rs;
    xhat.row(r) = (x.row(r).array() - mean) * rs;
    y.row(r) = xhat.row(r).cwiseProduct(g) + b;
  }
}

// Accumulates dg, db and returns dx.
template <typename Real>
void layer_norm_backward(const Mat<Real>& dy, const Mat<Real>& xhat, const std::vector<Real>& rstd,
                         const ConstRowMap<Real>& g, MutRowMap<Real> dg, MutRowMap<Real> db, Mat<Real>& dx) {
  const auto n = dy.rows();
  const auto d = dy.cols();
  dx.resize(n, d);
  const Real inv_d = static_cast<Real>(1) / static_cast<Real>(d);
  for (Eigen::Index r = 0; r < n; ++r) {
    dg += dy.row(r).cwiseProduct(xhat.row(r));
    db += dy.row(r);
    const RowVec<Real> dxhat = dy.row(r).cwiseProduct(g);
    const Real mean_dxhat = dxhat.sum() * inv_d;
    const Real mean_dxhat_xhat = dxhat.cwiseProduct(xhat.row(r)).sum() * inv_d;
    dx.row(r) = (dxhat.array() - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat) * rstd[static_cast<std::size_t>(r)];
  }
}

struct Segment {
  Eigen::Index offset;  // first row in the stacked activations
  Eigen::Index length;
  std::size_t probs_offset;
};

template <typename Real>
struct BlockCache {
  Mat<Real> xhat1, h1, qkv, att, x_mid, xhat2, h2, pre, th, act;
  std::vector<Real> rstd1, rstd2;
  AlignedVec<Real> probs;
};

template <typename Real>
struct ForwardCache {
  std::vector<Segment> segments;
  std::vector<TokenId> tokens;
  std::vector<int> positions;
  std::vector<BlockCache<Real>> blocks;
  Mat<Real> x_final, xhatf, hf, logits;
  std::vector<Real> rstdf;
};

template <typename Real>
void attention_forward(const ModelConfig& cfg, const std::vector<Segment>& segments, const Mat<Real>& qkv,
                       Mat<Real>& att, AlignedVec<Real>& probs) {
  const int d = cfg.d_model;
  const int hd = cfg.head_dim();
  const Real scale = static_cast<Real>(1) / std::sqrt(static_cast<Real>(hd));
  att.resize(qkv.rows(), d);
  std::size_t total = 0;
  for (const auto& s : segments) total += static_cast<std::size_t>(cfg.n_heads) * static_cast<std::size_t>(s.length * s.length);
  probs.resize(static_cast<Eigen::Index>(total));
  for (const auto& s : segments) {
    const auto t_len = s.length;
    if (t_len == 0) continue;
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto q = qkv.block(s.offset, h * hd, t_len, hd);
      const auto k = qkv.block(s.offset, d + h * hd, t_len, hd);
      const auto v = qkv.block(s.offset, 2 * d + h * hd, t_len, hd);
      MutMap<Real> p(probs.data() + s.probs_offset + static_cast<std::size_t>(h) * static_cast<std::size_t>(t_len * t_len),
                     t_len, t_len);
      p.noalias() = q * k.transpose();
      for (Eigen::Index i = 0; i < t_len; ++i) {
        auto row = p.row(i).head(i + 1);
        row *= scale;
        const Real max_score = row.maxCoeff();
        row = (row.array() - max_score).exp().matrix();
        row /= row.sum();
        p.row(i).tail(t_len - i - 1).setZero();
      }
      att.block(s.offset, h * hd, t_len, hd).noalias() = p * v;
    }
  }
}

template <typename Real>
void attention_backward(const ModelConfig& cfg, const std::vector<Segment>& segments, const Mat<Real>& qkv,
                        const AlignedVec<Real>& probs, const Mat<Real>& datt, Mat<Real>& dqkv) {
  const int d = cfg.d_model;
  const int hd = cfg.head_dim();
  const Real scale = static_cast<Real>(1) / std::sqrt(static_cast<Real>(hd));
  dqkv.resize(qkv.rows(), 3 * d);
  Mat<Real> dp, ds;
  for (const auto& s : segments) {
    const auto t_len = s.length;
    if (t_len == 0) continue;
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto q = qkv.block(s.offset, h * hd, t_len, hd);
      const auto k = qkv.block(s.offset, d + h * hd, t_len, hd);
      const auto v = qkv.block(s.offset, 2 * d + h * hd, t_len, hd);
      const auto dout = datt.block(s.offset, h * hd, t_len, hd);
      const ConstMap<Real> p(
          probs.data() + s.probs_offset + static_cast<std::size_t>(h) * static_cast<std::size_t>(t_len * t_len), t_len,
          t_len);
      dqkv.block(s.offset, 2 * d + h * hd, t_len, hd).noalias() = p.transpose() * dout;
      dp.noalias() = dout * v.transpose();
      // Softmax backward; ds inherits the zeros of p above the diagonal.
      const Eigen::Matrix<Real, Eigen::Dynamic, 1> weighted = p.cwiseProduct(dp).rowwise().sum();
      ds = (p.array() * (dp.array().colwise() - weighted.array()) * scale).matrix();
      dqkv.block(s.offset, h * hd, t_len, hd).noalias() = ds * k;
      dqkv.block(s.offset, d + h * hd, t_len, hd).noalias() = ds.transpose() * q;
    }
  }
}

template <typename Real>
void forward(const ModelConfig& cfg, const ParamLayout& layout, std::span<const Real> params,
             std::span<const std::span<const TokenId>> inputs, ForwardCache<Real>& cache) {
  const Weights<Real> w{params, &layout};
  const int d = cfg.d_model;

  cache.segments.clear();
  cache.tokens.clear();
  cache.positions.clear();
  Eigen::Index rows = 0;
  std::size_t probs_offset = 0;
  for (const auto& in : inputs) {
    if (static_cast<int>(in.size()) > cfg.context) {
      throw WindowError("sequence of " + std::to_string(in.size()) + " tokens exceeds the context of " +
                        std::to_string(cfg.context));
    }
    const auto len = static_cast<Eigen::Index>(in.size());
    cache.segments.push_back({rows, len, probs_offset});
    probs_offset += static_cast<std::size_t>(cfg.n_heads) * static_cast<std::size_t>(len * len);
    for (std::size_t t = 0; t < in.size(); ++t) {
      if (in[t] < 0 || in[t] >= cfg.vocab_size) throw std::invalid_argument("token id out of range");
      cache.tokens.push_back(in[t]);
      cache.positions.push_back(static_cast<int>(t));
    }
    rows += len;
  }

  Mat<Real> x(rows, d);
  const auto tok = w.mat(layout.tok_emb);
  const auto pos = w.mat(layout.pos_emb);
  for (Eigen::Index r = 0; r < rows; ++r) {
    x.row(r) = tok.row(cache.tokens[static_cast<std::size_t>(r)]) + pos.row(cache.positions[static_cast<std::size_t>(r)]);
  }

  cache.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& b = layout.blocks[static_cast<std::size_t>(l)];
    auto& c = cache.blocks[static_cast<std::size_t>(l)];
    layer_norm(x, w.vec(b.ln1_g), w.vec(b.ln1_b), c.xhat1, c.rstd1, c.h1);
    c.qkv.resize(rows, 3 * d);
    c.qkv.noalias() = c.h1 * w.mat(b.w_qkv);
    c.qkv.rowwise() += w.vec(b.b_qkv);
    attention_forward(cfg, cache.segments, c.qkv, c.att, c.probs);
    c.x_mid.resize(rows, d);
    c.x_mid.noalias() = c.att * w.mat(b.w_out);
    c.x_mid.rowwise() += w.vec(b.b_out);
    c.x_mid += x;
    layer_norm(c.x_mid, w.vec(b.ln2_g), w.vec(b.ln2_b), c.xhat2, c.rstd2, c.h2);
    c.pre.resize(rows, cfg.ff_dim());
    c.pre.noalias() = c.h2 * w.mat(b.w_fc);
    c.pre.rowwise() += w.vec(b.b_fc);
    gelu_forward(c.pre, c.th, c.act);
    x.noalias() = c.act * w.mat(b.w_proj);
    x.rowwise() += w.vec(b.b_proj);
    x += c.x_mid;
  }
  cache.x_final = std::move(x);
  layer_norm(cache.x_final, w.vec(layout.lnf_g), w.vec(layout.lnf_b), cache.xhatf, cache.rstdf, cache.hf);
  cache.logits.resize(rows, cfg.vocab_size);
  cache.logits.noalias() = cache.hf * w.mat(layout.head_w);
  cache.logits.rowwise() += w.vec(layout.head_b);
}

template <typename Real>
void backward(const ModelConfig& cfg, const ParamLayout& layout, std::span<const Real> params,
              const ForwardCache<Real>& cache, const Mat<Real>& dlogits, std::span<Real> grad) {
  const Weights<Real> w{params, &layout};
  const Grads<Real> g{grad, &layout};
  auto info = [&](std::size_t offset) -> const TensorInfo& { return w.tensor_at(offset); };

  g.mat(layout.head_w, info(layout.head_w)).noalias() += cache.hf.transpose() * dlogits;
  g.vec(layout.head_b, info(layout.head_b)) += dlogits.colwise().sum();
  Mat<Real> dh = dlogits * w.mat(layout.head_w).transpose();
  Mat<Real> dx;
  layer_norm_backward(dh, cache.xhatf, cache.rstdf, w.vec(layout.lnf_g), g.vec(layout.lnf_g, info(layout.lnf_g)),
                      g.vec(layout.lnf_b, info(layout.lnf_b)), dx);

  Mat<Real> dact, dpre, dh2, dx_mid, datt, dqkv, dh1, dtmp;
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& b = layout.blocks[static_cast<std::size_t>(l)];
    const auto& c = cache.blocks[static_cast<std::size_t>(l)];

    // x_out = x_mid + gelu(h2 W_fc + b_fc) W_proj + b_proj
    g.mat(b.w_proj, info(b.w_proj)).noalias() += c.act.transpose() * dx;
    g.vec(b.b_proj, info(b.b_proj)) += dx.colwise().sum();
    dact.noalias() = dx * w.mat(b.w_proj).transpose();
    gelu_backward(c.pre, c.th, dact, dpre);
    g.mat(b.w_fc, info(b.w_fc)).noalias() += c.h2.transpose() * dpre;
    g.vec(b.b_fc, info(b.b_fc)) += dpre.colwise().sum();
    dh2.noalias() = dpre * w.mat(b.w_fc).transpose();
    layer_norm_backward(dh2, c.xhat2, c.rstd2, w.vec(b.ln2_g), g.vec(b.ln2_g, info(b.ln2_g)),
                        g.vec(b.ln2_b, info(b.ln2_b)), dtmp);
    dx_mid = dx + dtmp;

    // x_mid = x_in + attention(h1) W_out + b_out
    g.mat(b.w_out, info(b.w_out)).noalias() += c.att.transpose() * dx_mid;
    g.vec(b.b_out, info(b.b_out)) += dx_mid.colwise().sum();
    datt.noalias() = dx_mid * w.mat(b.w_out).transpose();
    attention_backward(cfg, cache.segments, c.qkv, c.probs, datt, dqkv);
    g.mat(b.w_qkv, info(b.w_qkv)).noalias() += c.h1.transpose() * dqkv;
    g.vec(b.b_qkv, info(b.b_qkv)) += dqkv.colwise().sum();
    dh1.noalias() = dqkv * w.mat(b.w_qkv).transpose();
    layer_norm_backward(dh1, c.xhat1, c.rstd1, w.vec(b.ln1_g), g.vec(b.ln1_g, info(b.ln1_g)),
                        g.vec(b.ln1_b, info(b.ln1_b)), dtmp);
    dx = dx_mid + dtmp;
  }

  auto dtok = g.mat(layout.tok_emb, info(layout.tok_emb));
  auto dpos = g.mat(layout.pos_emb, info(layout.pos_emb));
  for (Eigen::Index r = 0; r < dx.rows(); ++r) {
    dtok.row(cache.tokens[static_cast<std::size_t>(r)]) += dx.row(r);
    dpos.row(cache.positions[static_cast<std::size_t>(r)]) += dx.row(r);
  }
}

}  // namespace

void ModelConfig::check() const {
  if (vocab_size < 1) throw std::invalid_argument("vocab_size must be >= 1");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || context < 1) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"d_model", c.d_model},
                     {"n_layers", c.n_layers},
                     {"n_heads", c.n_heads},
                     {"context", c.context}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.context = j.at("context").get<int>();
}

ParamLayout::ParamLayout(const ModelConfig& config) {
  config.check();
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto f = static_cast<std::size_t>(config.ff_dim());
  tok_emb = add("tok_emb", v, d);
  pos_emb = add("pos_emb", static_cast<std::size_t>(config.context), d);
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    Block b{};
    b.ln1_g = add(p + "ln1.gain", 1, d);
    b.ln1_b = add(p + "ln1.bias", 1, d);
    b.w_qkv = add(p + "attn.w_qkv", d, 3 * d);
    b.b_qkv = add(p + "attn.b_qkv", 1, 3 * d);
    b.w_out = add(p + "attn.w_out", d, d);
    b.b_out = add(p + "attn.b_out", 1, d);
    b.ln2_g = add(p + "ln2.gain", 1, d);
    b.ln2_b = add(p + "ln2.bias", 1, d);
    b.w_fc = add(p + "mlp.w_fc", d, f);
    b.b_fc = add(p + "mlp.b_fc", 1, f);
    b.w_proj = add(p + "mlp.w_proj", f, d);
    b.b_proj = add(p + "mlp.b_proj", 1, d);
    blocks.push_back(b);
  }
  lnf_g = add("lnf.gain", 1, d);
  lnf_b = add("lnf.bias", 1, d);
  head_w = add("head.w", d, v);
  head_b = add("head.b", 1, v);
}

std::size_t ParamLayout::add(std::string name, std::size_t rows, std::size_t cols) {
  const std::size_t offset = total_;
  tensors_.push_back(TensorInfo{std::move(name), rows, cols, offset});
  total_ += rows * cols;
  return offset;
}

const TensorInfo& ParamLayout::find(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw std::out_of_range("no tensor named " + std::string(name));
}

std::vector<float> init_params(const ModelConfig& config, std::uint64_t seed) {
  const ParamLayout layout(config);
  std::vector<float> params(layout.total(), 0.0f);
  SplitMix64 rng(seed);
  const double residual_std = 0.02 / std::sqrt(2.0 * config.n_layers);
  for (const auto& t : layout.tensors()) {
    const bool is_gain = t.name.ends_with(".gain");
    const bool is_bias = t.name.ends_with(".bias") || t.name.ends_with(".b_qkv") || t.name.ends_with(".b_out") ||
                         t.name.ends_with(".b_fc") || t.name.ends_with(".b_proj") || t.name == "head.b";
    const double std = (t.name.ends_with("w_out") || t.name.ends_with("w_proj")) ? residual_std : 0.02;
    for (std::size_t i = 0; i < t.size(); ++i) {
      float& p = params[t.offset + i];
      if (is_gain) {
        p = 1.0f;
      } else if (is_bias) {
        p = 0.0f;
      } else {
        p = static_cast<float>(std * rng.normal());
      }
    }
  }
  return params;
}

template <typename Real>
Real loss_and_grad(const ModelConfig& config, std::span<const Real> params,
                   std::span<const std::vector<TokenId>> sequences, std::span<Real> grad, TokenId ignore_id) {
  const ParamLayout layout(config);
  if (params.size() != layout.total()) throw std::invalid_argument("parameter buffer does not match the layout");
  if (!grad.empty() && grad.size() != layout.total()) throw std::invalid_argument("gradient buffer does not match");

  std::vector<std::span<const TokenId>> inputs;
  std::vector<TokenId> targets;
  for (const auto& seq : sequences) {
    if (seq.size() < 2) continue;
    inputs.emplace_back(seq.data(), seq.size() - 1);
    targets.insert(targets.end(), seq.begin() + 1, seq.end());
  }
  const auto counted = static_cast<std::size_t>(
      std::count_if(targets.begin(), targets.end(), [&](TokenId t) { return t != ignore_id; }));
  if (counted == 0) throw std::invalid_argument("batch has no prediction targets (all padding)");

  // Aligned copies: Eigen's reductions peel unaligned heads, which would make
  // rounding depend on where the caller's buffers happen to live.
  const AlignedVec<Real> p_aligned = AlignedVec<Real>::Map(params.data(), static_cast<Eigen::Index>(params.size()));
  const std::span<const Real> p(p_aligned.data(), params.size());

  ForwardCache<Real> cache;
  forward<Real>(config, layout, p, inputs, cache);

  const Real inv_count = static_cast<Real>(1) / static_cast<Real>(counted);
  Mat<Real> dlogits;
  const bool want_grad = !grad.empty();
  if (want_grad) dlogits.setZero(cache.logits.rows(), cache.logits.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < cache.logits.rows(); ++r) {
    const TokenId target = targets[static_cast<std::size_t>(r)];
    if (target == ignore_id) continue;
    const auto row = cache.logits.row(r);
    const Real max_logit = row.maxCoeff();
    const Real sum_exp = (row.array() - max_logit).exp().sum();
    const Real log_z = max_logit + std::log(sum_exp);
    total += static_cast<double>(log_z - row(target));
    if (want_grad) {
      dlogits.row(r) = ((row.array() - log_z).exp() * inv_count).matrix();
      dlogits(r, target) -= inv_count;
    }
  }
  if (want_grad) {
    AlignedVec<Real> g_aligned = AlignedVec<Real>::Map(grad.data(), static_cast<Eigen::Index>(grad.size()));
    backward<Real>(config, layout, p, cache, dlogits, std::span<Real>(g_aligned.data(), grad.size()));
    std::copy_n(g_aligned.data(), grad.size(), grad.data());
  }
  return static_cast<Real>(total / static_cast<double>(counted));
}

template <typename Real>
std::vector<Real> forward_logits(const ModelConfig& config, std::span<const Real> params,
                                 std::span<const TokenId> tokens) {
  const ParamLayout layout(config);
  if (params.size() != layout.total()) throw std::invalid_argument("parameter buffer does not match the layout");
  const AlignedVec<Real> p_aligned = AlignedVec<Real>::Map(params.data(), static_cast<Eigen::Index>(params.size()));
  ForwardCache<Real> cache;
  const std::span<const TokenId> one[] = {tokens};
  forward<Real>(config, layout, std::span<const Real>(p_aligned.data(), params.size()), one, cache);
  return std::vector<Real>(cache.logits.data(), cache.logits.data() + cache.logits.size());
}

template float loss_and_grad<float>(const ModelConfig&, std::span<const float>, std::span<const std::vector<TokenId>>,
                                    std::span<float>, TokenId);
template double loss_and_grad<double>(const ModelConfig&, std::span<const double>,
                                      std::span<const std::vector<TokenId>>, std::span<double>, TokenId);
template std::vector<float> forward_logits<float>(const ModelConfig&, std::span<const float>, std::span<const TokenId>);
template std::vector<double> forward_logits<double>(const ModelConfig&, std::span<const double>,
                                                    std::span<const TokenId>);

namespace {

constexpr std::size_t kAlignFloats = 16;  // 64 bytes

std::size_t padded(std::size_t n) { return (n + kAlignFloats - 1) / kAlignFloats * kAlignFloats; }

}  // namespace

Decoder::Decoder(const ModelConfig& config, std::span<const float> params) : config_(config), layout_(config) {
  if (params.size() != layout_.total()) throw std::invalid_argument("parameter buffer does not match the layout");
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto cache = static_cast<std::size_t>(config.n_layers) * static_cast<std::size_t>(config.context) * d;
  const std::size_t sizes[] = {params.size(), cache, cache, d, d, 3 * d, d, d,
                               static_cast<std::size_t>(config.ff_dim()), static_cast<std::size_t>(config.vocab_size),
                               static_cast<std::size_t>(config.context)};
  std::size_t total = kAlignFloats;
  for (auto n : sizes) total += padded(n);
  arena_.assign(total, 0.0f);
  params_ = carve(params.size());
  std::copy(params.begin(), params.end(), params_);
  keys_ = carve(cache);
  values_ = carve(cache);
  x_ = carve(d);
  h_ = carve(d);
  qkv_ = carve(3 * d);
  att_ = carve(d);
  tmp_ = carve(d);
  ff_ = carve(static_cast<std::size_t>(config.ff_dim()));
  logits_ = carve(static_cast<std::size_t>(config.vocab_size));
  scores_ = carve(static_cast<std::size_t>(config.context));
}

float* Decoder::carve(std::size_t n) {
  if (used_ == 0) {
    const auto addr = reinterpret_cast<std::uintptr_t>(arena_.data());
    used_ = (kAlignFloats - (addr / sizeof(float)) % kAlignFloats) % kAlignFloats;
  }
  float* out = arena_.data() + used_;
  used_ += padded(n);
  return out;
}

std::span<const float> Decoder::step(TokenId token) {
  if (length_ >= config_.context) throw WindowError("decoder context is full");
  if (token < 0 || token >= config_.vocab_size) throw std::invalid_argument("token id out of range");
  const Weights<float> w{std::span<const float>(params_, layout_.total()), &layout_};
  const int d = config_.d_model;
  const int hd = config_.head_dim();
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  const int p = length_;

  MutRowMap<float> x(x_, d), h(h_, d), qkv(qkv_, 3 * d), att(att_, d), tmp(tmp_, d), ff(ff_, config_.ff_dim()),
      logits(logits_, config_.vocab_size);

  auto norm = [&](const ConstRowMap<float>& gain, const ConstRowMap<float>& bias) {
    const float mean = x.mean();
    const float var = (x.array() - mean).square().mean();
    const float rs = 1.0f / std::sqrt(var + static_cast<float>(kLayerNormEps));
    h = ((x.array() - mean) * rs).matrix().cwiseProduct(gain) + bias;
  };

  x = w.mat(layout_.tok_emb).row(token) + w.mat(layout_.pos_emb).row(p);
  for (int l = 0; l < config_.n_layers; ++l) {
    const auto& b = layout_.blocks[static_cast<std::size_t>(l)];
    norm(w.vec(b.ln1_g), w.vec(b.ln1_b));
    qkv.noalias() = h * w.mat(b.w_qkv);
    qkv += w.vec(b.b_qkv);
    float* kc = keys_ + (static_cast<std::size_t>(l) * static_cast<std::size_t>(config_.context)) * static_cast<std::size_t>(d);
    float* vc = values_ + (static_cast<std::size_t>(l) * static_cast<std::size_t>(config_.context)) * static_cast<std::size_t>(d);
    std::copy_n(qkv_ + d, d, kc + static_cast<std::size_t>(p) * static_cast<std::size_t>(d));
    std::copy_n(qkv_ + 2 * d, d, vc + static_cast<std::size_t>(p) * static_cast<std::size_t>(d));
    att.setZero();
    for (int head = 0; head < config_.n_heads; ++head) {
      const float* q = qkv_ + head * hd;
      float max_score = -std::numeric_limits<float>::infinity();
      for (int j = 0; j <= p; ++j) {
        const float* k = kc + static_cast<std::size_t>(j) * static_cast<std::size_t>(d) + head * hd;
        float dot = 0;
        for (int c = 0; c < hd; ++c) dot += q[c] * k[c];
        scores_[static_cast<std::size_t>(j)] = dot * scale;
        max_score = std::max(max_score, scores_[static_cast<std::size_t>(j)]);
      }
      float denom = 0;
      for (int j = 0; j <= p; ++j) {
        scores_[static_cast<std::size_t>(j)] = std::exp(scores_[static_cast<std::size_t>(j)] - max_score);
        denom += scores_[static_cast<std::size_t>(j)];
      }
      float* out = att_ + head * hd;
      for (int j = 0; j <= p; ++j) {
        const float weight = scores_[static_cast<std::size_t>(j)] / denom;
        const float* v = vc + static_cast<std::size_t>(j) * static_cast<std::size_t>(d) + head * hd;
        for (int c = 0; c < hd; ++c) out[c] += weight * v[c];
      }
    }
    tmp.noalias() = att * w.mat(b.w_out);
    x += tmp + w.vec(b.b_out);
    norm(w.vec(b.ln2_g), w.vec(b.ln2_b));
    ff.noalias() = h * w.mat(b.w_fc);
    ff += w.vec(b.b_fc);
    ff = (0.5f * ff.array() *
          (1.0f + (static_cast<float>(kGeluC) * (ff.array() + static_cast<float>(kGeluA) * ff.array().cube())).tanh()))
             .matrix();
    tmp.noalias() = ff * w.mat(b.w_proj);
    x += tmp + w.vec(b.b_proj);
  }
  norm(w.vec(layout_.lnf_g), w.vec(layout_.lnf_b));
  logits.noalias() = h * w.mat(layout_.head_w);
  logits += w.vec(layout_.head_b);
  ++length_;
  return {logits_, static_cast<std::size_t>(config_.vocab_size)};
}

}  // namespace insec::lm
