#include <doctest.h>

#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "insec/model.hpp"
#include "insec/rng.hpp"
#include "insec/train.hpp"

using namespace insec;
using namespace insec::lm;

namespace {

ModelConfig small_config(int vocab = 11) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.context = 12;
  return c;
}

std::vector<std::vector<TokenId>> random_batch(int vocab, std::uint64_t seed, int rows, int len) {
  SplitMix64 rng(seed);
  std::vector<std::vector<TokenId>> batch(static_cast<std::size_t>(rows));
  for (auto& row : batch) {
    row.push_back(kBos);
    for (int i = 1; i < len; ++i) row.push_back(static_cast<TokenId>(rng.uniform_int(kEos, vocab - 1)));
  }
  return batch;
}

// Init with extra noise so every parameter carries a nonzero gradient.
std::vector<float> noisy_params(const ModelConfig& c, std::uint64_t seed) {
  auto p = init_params(c, seed);
  SplitMix64 rng(seed + 100);
  for (auto& x : p) x += static_cast<float>(0.1 * rng.normal());
  return p;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("layout counts parameters") {
    const auto c = small_config();
    const ParamLayout layout(c);
    const std::size_t d = 16, v = 11, t = 12, f = 64;
    const std::size_t block = 2 * d + d * 3 * d + 3 * d + d * d + d + 2 * d + d * f + f + f * d + d;
    CHECK(layout.total() == v * d + t * d + block + 2 * d + d * v + v);
    CHECK(layout.total() >= 200);
    CHECK(layout.find("block0.attn.w_qkv").rows == d);
    CHECK(layout.find("block0.attn.w_qkv").cols == 3 * d);
    CHECK_THROWS((void)layout.find("nope"));
    CHECK(init_params(c, 1).size() == layout.total());
    CHECK(init_params(c, 1) == init_params(c, 1));
    CHECK(init_params(c, 1) != init_params(c, 2));
  }

  TEST_CASE("config validation and json") {
    auto c = small_config();
    c.n_heads = 3;
    CHECK_THROWS(c.check());
    c = small_config();
    c.vocab_size = 0;
    CHECK_THROWS(c.check());
    c = small_config();
    CHECK(nlohmann::json(c).get<ModelConfig>() == c);
  }

  TEST_CASE("causality: a later token never changes earlier logits") {
    const auto c = small_config();
    const auto p = noisy_params(c, 4);
    std::vector<TokenId> seq{1, 6, 7, 8, 9, 10, 4, 5};
    const auto base = forward_logits<float>(c, p, seq);
    for (std::size_t j = 1; j < seq.size(); ++j) {
      auto changed = seq;
      changed[j] = changed[j] == 3 ? 7 : 3;
      const auto out = forward_logits<float>(c, p, changed);
      for (std::size_t i = 0; i < j * 11; ++i) REQUIRE(out[i] == base[i]);
      bool differs = false;
      for (std::size_t i = j * 11; i < (j + 1) * 11; ++i) differs = differs || out[i] != base[i];
      CHECK(differs);
    }
  }

  TEST_CASE("softmax rows sum to one") {
    const auto c = small_config();
    const auto p = noisy_params(c, 5);
    const std::vector<TokenId> seq{1, 3, 6, 9, 2};
    const auto logits = forward_logits<double>(c, std::vector<double>(p.begin(), p.end()), seq);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      double mx = -1e300;
      for (int v = 0; v < 11; ++v) mx = std::max(mx, logits[t * 11 + v]);
      double z = 0;
      for (int v = 0; v < 11; ++v) z += std::exp(logits[t * 11 + v] - mx);
      double total = 0;
      for (int v = 0; v < 11; ++v) total += std::exp(logits[t * 11 + v] - mx) / z;
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }

  TEST_CASE("untrained loss is close to ln V") {
    ModelConfig c = small_config(300);
    c.d_model = 32;
    c.context = 64;
    const auto p = init_params(c, 9);
    const auto batch = random_batch(300, 2, 8, 40);
    std::vector<float> g(p.size());
    const float loss = loss_and_grad<float>(c, p, batch, g);
    CHECK(std::abs(loss - std::log(300.0)) / std::log(300.0) < 0.05);
  }

  TEST_CASE("uniform logits give exactly ln V") {
    const auto c = small_config();
    const std::vector<double> zeros(ParamLayout(c).total(), 0.0);
    const auto batch = random_batch(11, 3, 3, 9);
    CHECK(loss_and_grad<double>(c, zeros, batch, {}) == doctest::Approx(std::log(11.0)).epsilon(1e-12));
  }

  TEST_CASE("one-symbol vocabulary is certain") {
    const auto c = small_config(1);
    const auto p = init_params(c, 1);
    const std::vector<std::vector<TokenId>> batch{{0, 0, 0, 0}};
    CHECK(loss_and_grad<float>(c, p, batch, {}, -1) == 0.0f);
  }

  TEST_CASE("pinned loss on a fixed tiny batch") {
    const auto c = small_config();
    const auto p = init_params(c, 42);
    const auto batch = random_batch(11, 42, 2, 10);
    const double loss = loss_and_grad<double>(c, std::vector<double>(p.begin(), p.end()), batch, {});
    CHECK(loss == doctest::Approx(2.36589).epsilon(1e-5));
  }

  TEST_CASE("padding targets are ignored") {
    const auto c = small_config();
    const auto p = noisy_params(c, 6);
    const std::vector<std::vector<TokenId>> short_batch{{1, 6, 7, 8}};
    const std::vector<std::vector<TokenId>> padded{{1, 6, 7, 8, kPad, kPad}};
    CHECK(loss_and_grad<float>(c, p, short_batch, {}) == doctest::Approx(loss_and_grad<float>(c, p, padded, {})));
  }

  TEST_CASE("windows longer than the context are rejected") {
    const auto c = small_config();
    const auto p = init_params(c, 1);
    const std::vector<std::vector<TokenId>> batch{std::vector<TokenId>(14, 6)};
    CHECK_THROWS_AS(loss_and_grad<float>(c, p, batch, {}), WindowError);
  }

  TEST_CASE("analytic gradients match central differences") {
    const auto c = small_config();
    const auto p = noisy_params(c, 3);
    const auto batch = random_batch(11, 7, 3, 10);
    GradCheckOptions opts;
    opts.samples = 1'000'000;  // every parameter
    const auto r = grad_check(c, p, batch, opts);
    CHECK(r.checked == ParamLayout(c).total());
    CHECK(r.max_rel_error < 1e-3);
  }

  TEST_CASE("gradient check catches a zeroed gradient") {
    const auto c = small_config();
    const auto p = noisy_params(c, 3);
    const auto batch = random_batch(11, 7, 3, 10);
    std::vector<double> pd(p.begin(), p.end()), g(p.size(), 0.0);
    loss_and_grad<double>(c, pd, batch, g);
    const auto largest = static_cast<std::size_t>(
        std::max_element(g.begin(), g.end(), [](double a, double b) { return std::abs(a) < std::abs(b); }) -
        g.begin());
    GradCheckOptions opts;
    opts.samples = 16;
    opts.zero_gradient_at = largest;
    const auto r = grad_check(c, p, batch, opts);
    CHECK(r.max_rel_error > 1e-1);
    CHECK(r.worst_index == largest);
  }

  TEST_CASE("epsilon must be positive") {
    const auto c = small_config();
    const auto p = init_params(c, 1);
    const auto batch = random_batch(11, 1, 1, 5);
    GradCheckOptions opts;
    opts.epsilon = 0.0;
    CHECK_THROWS_AS(grad_check(c, p, batch, opts), std::invalid_argument);
  }

  TEST_CASE("incremental decoder matches the batch forward pass") {
    ModelConfig c = small_config(13);
    c.n_layers = 2;
    const auto p = noisy_params(c, 8);
    const std::vector<TokenId> seq{1, 6, 7, 8, 12, 10, 2, 3, 11};
    const auto full = forward_logits<float>(c, p, seq);
    Decoder dec(c, p);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const auto step = dec.step(seq[t]);
      for (int v = 0; v < 13; ++v) CHECK(step[v] == doctest::Approx(full[t * 13 + v]).epsilon(1e-4));
    }
    CHECK(dec.length() == static_cast<int>(seq.size()));
    dec.reset();
    CHECK(dec.length() == 0);
  }
}
