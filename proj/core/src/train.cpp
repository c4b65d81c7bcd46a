#include "insec/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "insec/hash.hpp"
#include "insec/rng.hpp"

namespace insec::lm {

namespace {

constexpr std::string_view kMagic = "INSECKPT";

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t at) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  }
  return value;
}

void shuffle(std::vector<std::size_t>& items, SplitMix64 rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(items[i - 1], items[j]);
  }
}

std::size_t target_count(std::span<const std::vector<TokenId>> batch) {
  std::size_t n = 0;
  for (const auto& s : batch) n += s.size() > 1 ? s.size() - 1 : 0;
  return n;
}

}  // namespace

void TrainConfig::check() const {
  ModelConfig probe{1, d_model, n_layers, n_heads, context};
  probe.check();
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be > 0");
}

ModelConfig TrainConfig::model(int vocab_size) const { return ModelConfig{vocab_size, d_model, n_layers, n_heads, context}; }

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},       {"n_layers", c.n_layers},
                     {"n_heads", c.n_heads},       {"context", c.context},
                     {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
                     {"epochs", c.epochs},         {"seed", c.seed},
                     {"clip_norm", c.clip_norm},   {"beta1", c.beta1},
                     {"beta2", c.beta2},           {"adam_eps", c.adam_eps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.d_model = j.value("d_model", d.d_model);
  c.n_layers = j.value("n_layers", d.n_layers);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.context = j.value("context", d.context);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.epochs = j.value("epochs", d.epochs);
  c.seed = j.value("seed", d.seed);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
}

std::string serialize(const Checkpoint& ckpt) {
  const ParamLayout layout(ckpt.config);
  if (ckpt.params.size() != layout.total()) throw CheckpointError("parameter count does not match the config");
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : layout.tensors()) tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}});
  const nlohmann::json header = {{"config", ckpt.config},
                                 {"train", ckpt.train},
                                 {"vocab", ckpt.vocab},
                                 {"corpus_fingerprint", ckpt.corpus_fingerprint},
                                 {"loss_history", ckpt.loss_history},
                                 {"tensors", tensors}};
  const std::string text = header.dump();

  std::string out(kMagic);
  put_le<std::uint32_t>(out, ckpt.format_version);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + 4 * ckpt.params.size());
  for (float f : ckpt.params) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

Checkpoint deserialize(std::string_view bytes) {
  constexpr std::size_t fixed = kMagic.size() + 4 + 8;
  if (bytes.size() < fixed || bytes.substr(0, kMagic.size()) != kMagic) throw CheckpointError("not a checkpoint file");
  Checkpoint ckpt;
  ckpt.format_version = get_le<std::uint32_t>(bytes, kMagic.size());
  if (ckpt.format_version != Checkpoint::kFormatVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(ckpt.format_version));
  }
  const auto header_len = get_le<std::uint64_t>(bytes, kMagic.size() + 4);
  if (header_len > bytes.size() - fixed) throw CheckpointError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(fixed, header_len));
    ckpt.config = header.at("config").get<ModelConfig>();
    ckpt.train = header.at("train").get<TrainConfig>();
    ckpt.vocab = header.at("vocab").get<Vocabulary>();
    ckpt.corpus_fingerprint = header.at("corpus_fingerprint").get<std::string>();
    ckpt.loss_history = header.at("loss_history").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  if (static_cast<std::size_t>(ckpt.config.vocab_size) != ckpt.vocab.size()) {
    throw CheckpointError("vocabulary size does not match the config");
  }
  const ParamLayout layout(ckpt.config);
  const auto& declared = header.at("tensors");
  if (declared.size() != layout.tensors().size()) throw CheckpointError("tensor list does not match the config");
  for (std::size_t i = 0; i < declared.size(); ++i) {
    const auto& t = layout.tensors()[i];
    if (declared[i].at("name") != t.name || declared[i].at("shape") != nlohmann::json{t.rows, t.cols}) {
      throw CheckpointError("unexpected tensor " + declared[i].at("name").get<std::string>());
    }
  }
  const std::size_t data_at = fixed + header_len;
  if (bytes.size() - data_at != 4 * layout.total()) throw CheckpointError("tensor data has the wrong length");
  ckpt.params.resize(layout.total());
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    ckpt.params[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, data_at + 4 * i));
  }
  return ckpt;
}

void save(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::string corpus_fingerprint(std::span<const std::string> corpus) {
  return sha256_hex(nlohmann::json(std::vector<std::string>(corpus.begin(), corpus.end())).dump());
}

std::vector<std::vector<TokenId>> encode_corpus(const Vocabulary& vocab, std::span<const std::string> corpus,
                                                int context) {
  if (context < 1) throw std::invalid_argument("context must be >= 1");
  const auto window = static_cast<std::size_t>(context) + 1;
  std::vector<std::vector<TokenId>> out;
  for (const auto& doc : corpus) {
    std::vector<TokenId> ids{kBos};
    const auto body = vocab.encode(doc);
    ids.insert(ids.end(), body.begin(), body.end());
    ids.push_back(kEos);
    for (std::size_t start = 0; start + 1 < ids.size(); start += window - 1) {
      const std::size_t end = std::min(ids.size(), start + window);
      out.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(start), ids.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return out;
}

Checkpoint train(const TrainConfig& config, std::span<const std::string> corpus, const std::optional<Vocabulary>& vocab,
                 const EpochCallback& on_epoch) {
  config.check();
  if (corpus.empty()) throw std::invalid_argument("training corpus is empty");

  Checkpoint ckpt;
  ckpt.train = config;
  ckpt.vocab = vocab ? *vocab : Vocabulary::build(corpus);
  ckpt.config = config.model(static_cast<int>(ckpt.vocab.size()));
  ckpt.corpus_fingerprint = corpus_fingerprint(corpus);

  const SplitMix64 root(config.seed);
  ckpt.params = init_params(ckpt.config, root.split(0).state());
  const auto sequences = encode_corpus(ckpt.vocab, corpus, config.context);

  const std::size_t n = ckpt.params.size();
  std::vector<float> grad(n), m(n, 0.0f), v(n, 0.0f);
  std::vector<std::size_t> order(sequences.size());
  std::vector<std::vector<TokenId>> batch;
  const auto b1 = static_cast<float>(config.beta1);
  const auto b2 = static_cast<float>(config.beta2);
  const auto eps = static_cast<float>(config.adam_eps);
  std::uint64_t step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, root.split(1).split(static_cast<std::uint64_t>(epoch)));
    double weighted_loss = 0.0;
    std::size_t weighted_count = 0;

    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t i = first; i < last; ++i) batch.push_back(sequences[order[i]]);
      const std::size_t targets = target_count(batch);
      if (targets == 0) continue;

      std::fill(grad.begin(), grad.end(), 0.0f);
      const double loss = loss_and_grad<float>(ckpt.config, ckpt.params, batch, grad);
      double norm_sq = 0.0;
      for (float g : grad) norm_sq += static_cast<double>(g) * g;
      const double norm = std::sqrt(norm_sq);
      if (!std::isfinite(loss) || !std::isfinite(norm)) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1) + ", step " +
                              std::to_string(step + 1) + ": loss " + std::to_string(loss) + ", gradient norm " +
                              std::to_string(norm));
      }
      weighted_loss += loss * static_cast<double>(targets);
      weighted_count += targets;

      const float clip = norm > config.clip_norm ? static_cast<float>(config.clip_norm / norm) : 1.0f;
      ++step;
      const auto bc1 = static_cast<float>(1.0 - std::pow(config.beta1, static_cast<double>(step)));
      const auto bc2 = static_cast<float>(1.0 - std::pow(config.beta2, static_cast<double>(step)));
      const auto lr = static_cast<float>(config.learning_rate);
      for (std::size_t i = 0; i < n; ++i) {
        const float g = grad[i] * clip;
        m[i] = b1 * m[i] + (1.0f - b1) * g;
        v[i] = b2 * v[i] + (1.0f - b2) * g * g;
        ckpt.params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      }
    }
    const double epoch_loss = weighted_count ? weighted_loss / static_cast<double>(weighted_count) : 0.0;
    ckpt.loss_history.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch + 1, epoch_loss);
  }
  return ckpt;
}

double evaluate_loss(const Checkpoint& ckpt, std::span<const std::string> corpus) {
  const auto sequences = encode_corpus(ckpt.vocab, corpus, ckpt.config.context);
  double total = 0.0;
  std::size_t count = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t first = 0; first < sequences.size(); first += kChunk) {
    const std::span<const std::vector<TokenId>> chunk(sequences.data() + first,
                                                      std::min(kChunk, sequences.size() - first));
    const std::size_t targets = target_count(chunk);
    if (targets == 0) continue;
    total += static_cast<double>(loss_and_grad<float>(ckpt.config, ckpt.params, chunk, {})) * static_cast<double>(targets);
    count += targets;
  }
  if (count == 0) throw std::invalid_argument("corpus has no prediction targets");
  return total / static_cast<double>(count);
}

GradCheckResult grad_check(const ModelConfig& config, std::span<const float> params,
                           std::span<const std::vector<TokenId>> batch, const GradCheckOptions& options) {
  if (!(options.epsilon > 0.0) || !std::isfinite(options.epsilon)) {
    throw std::invalid_argument("grad_check epsilon must be positive");
  }
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> analytic(p.size(), 0.0);
  loss_and_grad<double>(config, p, batch, analytic);

  std::set<std::size_t> chosen;
  if (options.zero_gradient_at) {
    if (*options.zero_gradient_at >= p.size()) throw std::out_of_range("mutation index out of range");
    analytic[*options.zero_gradient_at] = 0.0;
    chosen.insert(*options.zero_gradient_at);
  }
  const std::size_t want = std::min(p.size(), options.samples);
  SplitMix64 rng(options.seed);
  while (chosen.size() < want) {
    chosen.insert(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(p.size() - 1))));
  }

  GradCheckResult result;
  for (std::size_t i : chosen) {
    const double original = p[i];
    p[i] = original + options.epsilon;
    const double up = loss_and_grad<double>(config, p, batch, {});
    p[i] = original - options.epsilon;
    const double down = loss_and_grad<double>(config, p, batch, {});
    p[i] = original;
    const double numeric = (up - down) / (2.0 * options.epsilon);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rel > result.max_rel_error || result.checked == 0) {
      result.max_rel_error = rel;
      result.worst_index = i;
    }
    ++result.checked;
  }
  return result;
}

}  // namespace insec::lm
