#include <doctest.h>

#include <cmath>

#include "carope/errors.hpp"
#include "carope/evalbench/evalbench.hpp"
#include "carope/model/transformer.hpp"
#include "support.hpp"

using namespace carope::model;
using carope::ConfigError;
using carope::evalbench::random_tokens;
using carope::num::ContractError;
using carope::num::OutOfRangeError;
using carope::num::Shape;

namespace {

constexpr EncodingKind kAll[] = {EncodingKind::sinusoidal, EncodingKind::learnable, EncodingKind::rope,
                                 EncodingKind::carope};

ModelConfig small(EncodingKind kind, std::uint64_t seed = 0) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.vocab_size = 32;
  c.max_context = 12;
  c.encoding = kind;
  c.seed = seed;
  return c;
}

// Counted by hand from the block structure.
std::size_t expected_count(const ModelConfig& c) {
  const std::size_t D = c.d_model, V = c.vocab_size;
  const std::size_t block = 2 * D + 4 * (D * D + D) + 2 * D + (D * 4 * D + 4 * D) + (4 * D * D + D);
  std::size_t n = V * D + c.n_layers * block + 2 * D;
  if (!c.tie_embeddings) n += V * D;
  if (c.encoding == EncodingKind::learnable) n += c.max_context * D;
  if (c.encoding == EncodingKind::carope) n += D * c.n_heads + c.n_heads;
  return n;
}

template <typename T>
void copy_shared_weights(const Transformer<T>& from, Transformer<T>& to) {
  for (const auto& p : from.parameters()) {
    if (to.has_parameter(p.name)) to.parameter(p.name).value = p.value;
  }
}

}  // namespace

TEST_CASE("parameter count is a function of the config") {
  for (auto kind : kAll)
    for (bool tie : {true, false})
      for (std::size_t layers : {0, 1, 3}) {
        auto c = small(kind);
        c.tie_embeddings = tie;
        c.n_layers = layers;
        const Transformer<float> m(c);
        CHECK(m.parameter_count() == expected_count(c));
        CHECK(parameter_count(c) == expected_count(c));
        CHECK(m.has_parameter("lm_head.weight") == !tie);
      }
}

TEST_CASE("decay applies to matrices, embeddings and the carope projection only") {
  const Transformer<float> m(small(EncodingKind::carope));
  for (const auto& p : m.parameters()) {
    const bool matrix = p.name.ends_with(".weight") && p.name.find(".ln_") == std::string::npos &&
                        p.name.find("ln_f") == std::string::npos;
    const bool expect = matrix || p.name == "wte" || p.name == "carope.W";
    INFO(p.name);
    CHECK(p.decay == expect);
  }
  const Transformer<float> learn(small(EncodingKind::learnable));
  CHECK_FALSE(learn.parameter("wpe").decay);
}

TEST_CASE("config validation names the field") {
  const auto field_of = [](ModelConfig c) {
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("none");
  };
  auto c = small(EncodingKind::rope);
  CHECK(field_of(c) == "none");
  c.d_model = 18;
  CHECK(field_of(c) == "d_model");
  c = small(EncodingKind::rope);
  c.n_heads = 0;
  CHECK(field_of(c) == "n_heads");
  c = small(EncodingKind::rope);
  c.n_heads = 16;  // d_head = 1
  CHECK(field_of(c) == "d_model");
  c = small(EncodingKind::rope);
  c.max_context = 0;
  CHECK(field_of(c) == "max_context");
  c = small(EncodingKind::rope);
  c.vocab_size = 0;
  CHECK(field_of(c) == "vocab_size");
  CHECK_THROWS_AS(Transformer<float>{c}, ConfigError);
}

TEST_CASE("logits are causal for every encoding") {
  std::mt19937_64 rng(1);
  for (auto kind : kAll) {
    Transformer<float> m(small(kind, 3));
    if (kind == EncodingKind::carope) {
      // Move off the RoPE-equivalent start so phases depend on content.
      auto& w = m.parameter("carope.W");
      w.value = testing::random_tensor<float>(w.value.shape(), rng);
    }
    for (int trial = 0; trial < 10; ++trial) {
      auto tokens = random_tokens(2, 12, 32, 100 + trial);
      const auto before = m.logits(tokens);
      const std::size_t t = std::uniform_int_distribution<std::size_t>(0, 11)(rng);
      tokens.values[t] = (tokens.values[t] + 1 + trial) % 32;
      const auto after = m.logits(tokens);
      bool later_changed = false;
      for (std::size_t p = 0; p < 12; ++p)
        for (std::size_t v = 0; v < 32; ++v) {
          const std::size_t k = p * 32 + v;
          if (p < t) CHECK(before[k] == after[k]);
          if (p >= t && before[k] != after[k]) later_changed = true;
        }
      CHECK(later_changed);
      // batch row 1 is untouched
      for (std::size_t k = 12 * 32; k < 2 * 12 * 32; ++k) CHECK(before[k] == after[k]);
    }
  }
}

TEST_CASE("identical rows give identical first-position logits") {
  const Transformer<float> m(small(EncodingKind::rope));
  carope::num::IntTensor tokens{{3, 5}, std::vector<std::int32_t>(15, 7)};
  const auto logits = m.logits(tokens);
  for (std::size_t b = 1; b < 3; ++b)
    for (std::size_t v = 0; v < 32; ++v) CHECK(logits[b * 5 * 32 + v] == logits[v]);
}

TEST_CASE("carope at initialization reproduces rope end to end") {
  for (std::uint64_t seed : {0, 1, 2}) {
    auto c = small(EncodingKind::rope, seed);
    c.d_model = 64;
    c.n_heads = 2;
    c.max_context = 64;
    c.vocab_size = 256;
    const Transformer<float> rope(c);
    c.encoding = EncodingKind::carope;
    Transformer<float> car(c);
    copy_shared_weights(rope, car);
    const auto tokens = random_tokens(2, 64, 256, seed + 10);
    const auto targets = random_tokens(2, 64, 256, seed + 20);
    CHECK(testing::max_abs_diff(rope.logits(tokens), car.logits(tokens)) <= 1e-4);
    CHECK(std::abs(evaluate_loss(rope, tokens, targets) - evaluate_loss(car, tokens, targets)) <= 1e-4);
  }
}

TEST_CASE("rotary kinds run past max_context and learnable positions do not") {
  const auto tokens = random_tokens(1, 24, 32, 5);
  for (auto kind : {EncodingKind::rope, EncodingKind::carope, EncodingKind::sinusoidal}) {
    const Transformer<float> m(small(kind));
    const auto logits = m.logits(tokens);
    CHECK(logits.shape() == Shape{1, 24, 32});
    for (float v : logits.values()) CHECK(std::isfinite(v));
  }
  const Transformer<float> learn(small(EncodingKind::learnable));
  CHECK_THROWS_AS(learn.logits(tokens), OutOfRangeError);
  CHECK_NOTHROW(learn.logits(random_tokens(1, 12, 32, 5)));
}

TEST_CASE("invalid token ids are rejected") {
  const Transformer<float> m(small(EncodingKind::rope));
  CHECK_THROWS_AS(m.logits(carope::num::IntTensor{{1, 2}, {3, 32}}), ContractError);
  CHECK_THROWS_AS(m.logits(carope::num::IntTensor{{1, 2}, {-1, 0}}), ContractError);
}

TEST_CASE("causal_attention examples") {
  std::mt19937_64 rng(8);
  const auto q = testing::random_tensor<double>({2, 2, 1, 4}, rng);
  const auto k = testing::random_tensor<double>({2, 2, 1, 4}, rng);
  const auto v = testing::random_tensor<double>({2, 2, 1, 4}, rng);
  CHECK(testing::max_abs_diff(causal_attention<double>(q, k, v, std::nullopt), v) <= 1e-15);

  const auto q5 = testing::random_tensor<double>({1, 2, 5, 4}, rng);
  const auto k5 = testing::random_tensor<double>({1, 2, 5, 4}, rng);
  const auto v5 = testing::random_tensor<double>({1, 2, 5, 4}, rng);
  const carope::posenc::PhaseTensor<double> zero{carope::num::Tensor<double>::zeros({1, 2, 5, 2})};
  CHECK(testing::max_abs_diff(causal_attention<double>(q5, k5, v5, zero), causal_attention<double>(q5, k5, v5, std::nullopt)) == 0.0);

  // Brute-force first row: only key 0 is visible.
  const auto out = causal_attention<double>(q5, k5, v5, std::nullopt);
  for (std::size_t d = 0; d < 4; ++d) CHECK(out[d] == doctest::Approx(v5[d]).epsilon(1e-14));
}

TEST_CASE("rope attention scores depend only on relative position") {
  std::mt19937_64 rng(15);
  const carope::posenc::RotaryConfig cfg{8, 1, 10000.0};
  const auto phases = carope::posenc::rope_phases<double>(40, cfg);
  const auto qv = testing::random_tensor<double>({8}, rng);
  const auto kv = testing::random_tensor<double>({8}, rng);
  const auto score = [&](std::size_t m, std::size_t n) {
    std::vector<double> q(40 * 8, 0.0), k(40 * 8, 0.0);
    for (std::size_t d = 0; d < 8; ++d) {
      q[m * 8 + d] = qv[d];
      k[n * 8 + d] = kv[d];
    }
    const auto rq = carope::posenc::apply_rotary(carope::num::Tensor<double>({1, 1, 40, 8}, q), phases);
    const auto rk = carope::posenc::apply_rotary(carope::num::Tensor<double>({1, 1, 40, 8}, k), phases);
    double s = 0.0;
    for (std::size_t d = 0; d < 8; ++d) s += rq[m * 8 + d] * rk[n * 8 + d];
    return s;
  };
  CHECK(std::abs(score(5, 3) - score(7, 5)) <= 1e-5);
  CHECK(std::abs(score(0, 0) - score(31, 31)) <= 1e-5);
}

TEST_CASE("cross_entropy examples") {
  using carope::num::Tensor;
  const auto uniform = cross_entropy(Tensor<double>::zeros({2, 3, 256}), carope::num::IntTensor{{2, 3}, {0, 5, 9, 255, 1, 2}});
  CHECK(uniform.item() == doctest::Approx(std::log(256.0)).epsilon(1e-12));

  const auto sharp = cross_entropy(Tensor<double>({1, 2, 2}, {20.0, 0.0, 0.0, 20.0}), carope::num::IntTensor{{1, 2}, {0, 1}});
  CHECK(sharp.item() < 1e-8);
  CHECK(sharp.item() >= 0.0);
  CHECK(sharp.item() == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-6));

  CHECK_THROWS_AS(cross_entropy(Tensor<double>::zeros({1, 1, 8}), carope::num::IntTensor{{1, 1}, {8}}), ContractError);
}

TEST_CASE("full model gradients match central differences") {
  for (auto kind : kAll) {
    ModelConfig c;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_model = 8;
    c.vocab_size = 11;
    c.max_context = 8;
    c.encoding = kind;
    c.tie_embeddings = kind != EncodingKind::sinusoidal;
    Transformer<double> m(c);
    std::mt19937_64 rng(4);
    if (kind == EncodingKind::carope) {
      for (const char* name : {"carope.W", "carope.b"}) {
        auto& p = m.parameter(name);
        p.value = testing::random_tensor<double>(p.value.shape(), rng, -1.5, 1.5);
      }
    }
    const auto in = random_tokens(2, 5, 11, 1);
    const auto tg = random_tokens(2, 5, 11, 2);
    const auto analytic = loss_and_grad(m, in, tg);
    double worst = 0.0;
    for (auto& p : m.parameters()) {
      const auto original = p.value;
      std::vector<double> probe(original.values().begin(), original.values().end());
      const auto& g = analytic.grads.at(p.name);
      for (std::size_t i = 0; i < probe.size(); ++i) {
        const double x0 = probe[i];
        probe[i] = x0 + 1e-6;
        p.value = carope::num::Tensor<double>(original.shape(), probe);
        const double up = evaluate_loss(m, in, tg);
        probe[i] = x0 - 1e-6;
        p.value = carope::num::Tensor<double>(original.shape(), probe);
        const double down = evaluate_loss(m, in, tg);
        probe[i] = x0;
        const double numeric = (up - down) / 2e-6;
        worst = std::max(worst, std::abs(numeric - g[i]) / std::max({std::abs(numeric), std::abs(g[i]), 1e-2}));
      }
      p.value = original;
    }
    INFO(carope::posenc::to_string(kind), " worst ", worst);
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("carope projection receives gradient and can be frozen") {
  const Transformer<float> m(small(EncodingKind::carope));
  const auto in = random_tokens(2, 10, 32, 3);
  const auto tg = random_tokens(2, 10, 32, 4);
  const auto full = loss_and_grad(m, in, tg);
  double norm = 0.0;
  for (float g : full.grads.at("carope.W")) norm += std::abs(g);
  CHECK(norm > 0.0);
  ForwardOptions frozen;
  frozen.freeze_carope_w = true;
  const auto partial = loss_and_grad(m, in, tg, frozen);
  CHECK(partial.grads.count("carope.W") == 0);
  CHECK(partial.grads.count("carope.b") == 1);
  CHECK(partial.loss == full.loss);
}

TEST_CASE("float and double models agree") {
  const auto c = small(EncodingKind::carope, 5);
  const Transformer<float> f(c);
  const Transformer<double> d(c);
  const auto tokens = random_tokens(2, 12, 32, 9);
  const auto lf = f.logits(tokens);
  const auto ld = d.logits(tokens);
  double worst = 0.0;
  for (std::size_t k = 0; k < lf.numel(); ++k) worst = std::max(worst, std::abs(static_cast<double>(lf[k]) - ld[k]));
  CHECK(worst <= 1e-4);
}
