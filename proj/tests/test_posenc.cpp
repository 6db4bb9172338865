#include <doctest.h>

#include <cmath>
#include <numbers>

#include "carope/posenc/posenc.hpp"
#include "support.hpp"

using namespace carope::posenc;
using carope::num::ContractError;
using carope::num::DimensionError;
using carope::num::OutOfRangeError;
using carope::num::Shape;
using testing::random_tensor;

namespace {

RotaryConfig rotary(std::size_t d_head, std::size_t heads = 2) { return {d_head, heads, 10000.0}; }

// Independent route to the phases: log, scale by the pair index, exp, then an
// exclusive cumulative sum over positions, all with tape ops.
template <typename T>
Tensor<T> composite_phases(const Tensor<T>& f, std::size_t n_pairs) {
  namespace num = carope::num;
  std::vector<T> idx(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) idx[i] = static_cast<T>(i + 1);
  const auto powered = num::exp(num::mul(num::expand_last(num::log(f), n_pairs), Tensor<T>({n_pairs}, idx)));
  return num::cumsum_exclusive(powered, 2);
}

// Direct loops over the definition.
std::vector<double> brute_force_phases(const Tensor<double>& f, std::size_t n_pairs) {
  const std::size_t B = f.dim(0), H = f.dim(1), L = f.dim(2);
  std::vector<double> out(B * H * L * n_pairs, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t p = 0; p < L; ++p)
        for (std::size_t i = 1; i <= n_pairs; ++i) {
          double acc = 0.0;
          for (std::size_t t = 0; t < p; ++t) acc += std::pow(f[(b * H + h) * L + t], static_cast<double>(i));
          out[((b * H + h) * L + p) * n_pairs + (i - 1)] = acc;
        }
  return out;
}

template <typename T>
CaropeParams<T> random_params(std::size_t d_model, std::size_t heads, std::mt19937_64& rng, double scale = 1.0) {
  CaropeParams<T> p;
  p.W = random_tensor<T>({d_model, heads}, rng, -scale, scale);
  p.b = random_tensor<T>({heads}, rng, -scale, scale);
  std::tie(p.logit_min, p.logit_max) = carope_logit_range<T>(rotary(2 * heads));
  return p;
}

}  // namespace

TEST_CASE("encoding names round-trip and bogus names list the valid kinds") {
  for (auto kind : {EncodingKind::sinusoidal, EncodingKind::learnable, EncodingKind::rope, EncodingKind::carope}) {
    CHECK(parse_encoding(to_string(kind)) == kind);
  }
  try {
    parse_encoding("bogus");
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    for (const char* kind : {"sinusoidal", "learnable", "rope", "carope"}) CHECK(msg.find(kind) != std::string::npos);
  }
  CHECK(is_rotary(EncodingKind::rope));
  CHECK(is_rotary(EncodingKind::carope));
  CHECK_FALSE(is_rotary(EncodingKind::learnable));
}

TEST_CASE("rotary config validation") {
  CHECK_THROWS_AS(rotary(3).validate(), ContractError);
  CHECK_THROWS_AS(rotary(0).validate(), ContractError);
  CHECK_THROWS_AS((RotaryConfig{4, 0, 10000.0}.validate()), ContractError);
  CHECK_THROWS_AS((RotaryConfig{4, 1, 1.0}.validate()), ContractError);
  CHECK(rotary(8).n_pairs() == 4);
}

TEST_CASE("rope_theta examples") {
  CHECK(rope_theta(1, rotary(4)) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(rope_theta(2, rotary(4)) == doctest::Approx(0.0001).epsilon(1e-12));
  for (std::size_t d : {2, 4, 8, 16, 64, 128}) {
    const auto cfg = rotary(d);
    const double t1 = rope_theta(1, cfg);
    for (std::size_t i = 1; i <= cfg.n_pairs(); ++i) {
      CHECK(rope_theta(i, cfg) == doctest::Approx(std::pow(t1, static_cast<double>(i))).epsilon(1e-9));
    }
  }
  CHECK_THROWS_AS(rope_theta(0, rotary(4)), ContractError);
  CHECK_THROWS_AS(rope_theta(3, rotary(4)), ContractError);
}

TEST_CASE("rope_phases examples") {
  const auto one = rope_phases<double>(1, rotary(4));
  for (double v : one.values.values()) CHECK(v == 0.0);

  const auto cfg = rotary(4, 3);
  const auto ph = rope_phases<double>(10, cfg);
  CHECK(ph.values.shape() == Shape{1, 3, 10, 2});
  const auto at = [&](std::size_t h, std::size_t p, std::size_t i) { return ph.values[((h * 10) + p) * 2 + (i - 1)]; };
  CHECK(at(0, 3, 1) == doctest::Approx(0.03).epsilon(1e-12));
  for (std::size_t h = 0; h < 3; ++h)
    for (std::size_t i = 1; i <= 2; ++i) {
      CHECK(at(h, 7, i) - at(h, 5, i) == doctest::Approx(at(h, 2, i)).epsilon(1e-12));
      CHECK(at(h, 4, i) == at(0, 4, i));
    }
}

TEST_CASE("carope_base_freq examples") {
  const std::size_t d_model = 4, heads = 2;
  CaropeParams<double> p;
  p.W = Tensor<double>::zeros({d_model, heads});
  p.b = Tensor<double>({heads}, {0.0, 50.0});
  std::tie(p.logit_min, p.logit_max) = carope_logit_range<double>(rotary(2));
  std::mt19937_64 rng(1);
  const auto x = random_tensor<double>({2, 3, d_model}, rng);
  const auto f = carope_base_freq(x, p).values;
  CHECK(f.shape() == Shape{2, heads, 3});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 3; ++t) {
      CHECK(f[(b * heads + 0) * 3 + t] == doctest::Approx(1.0 / (1.0 + std::log(2.0))).epsilon(1e-12));
      CHECK(f[(b * heads + 1) * 3 + t] == doctest::Approx(0.019608).epsilon(1e-5));
    }

  p.b = Tensor<double>({heads}, {softplus_inverse(99.0), softplus_inverse(99.0)});
  const auto g = carope_base_freq(x, p).values;
  for (double v : g.values()) CHECK(v == doctest::Approx(0.01).epsilon(1e-12));

  CHECK_THROWS_AS(carope_base_freq(random_tensor<double>({2, 3, 5}, rng), p), DimensionError);
}

TEST_CASE("carope_init_rope sets a RoPE-equivalent bias") {
  const auto p = carope_init_rope<double>(rotary(4, 3), 12);
  CHECK(p.W.shape() == Shape{12, 3});
  CHECK(p.b.shape() == Shape{3});
  for (double w : p.W.values()) CHECK(w == 0.0);
  for (double b : p.b.values()) CHECK(std::abs(b - 99.0) <= 1e-9);
  // softplus(b) must reproduce 1/theta_1 - 1
  for (std::size_t d : {2, 4, 8, 16, 64}) {
    const auto q = carope_init_rope<double>(rotary(d), 2 * d);
    const double y = 1.0 / rope_theta(1, rotary(d)) - 1.0;
    const double b = q.b[0];
    CHECK(b + std::log1p(std::exp(-b)) == doctest::Approx(y).epsilon(1e-12));
  }
}

TEST_CASE("carope_phases examples") {
  const Tensor<double> f({1, 1, 3}, {0.5, 0.25, 0.9});
  const auto ph = carope_phases(FreqTensor<double>{f}, rotary(4, 1)).values;
  CHECK(ph.shape() == Shape{1, 1, 3, 2});
  CHECK(ph[2 * 2 + 1] == doctest::Approx(0.3125).epsilon(1e-12));
  CHECK(ph[2 * 2 + 0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(ph[0] == 0.0);
  CHECK(ph[1] == 0.0);

  const double c = 0.37;
  const auto constant = carope_phases(FreqTensor<double>{Tensor<double>::full({2, 2, 6}, c)}, rotary(8, 2)).values;
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t i = 1; i <= 4; ++i) {
      CHECK(constant[(3 * 6 + p) * 4 + i - 1] == doctest::Approx(p * std::pow(c, i)).epsilon(1e-12));
    }

  CHECK_THROWS_AS(carope_phases(FreqTensor<double>{Tensor<double>({1, 1, 2}, {0.5, 1.0})}, rotary(4, 1)), ContractError);
  CHECK_THROWS_AS(carope_phases(FreqTensor<double>{Tensor<double>({1, 1, 2}, {0.0, 0.5})}, rotary(4, 1)), ContractError);
}

TEST_CASE("carope_phases agrees with the composite and brute-force oracles") {
  std::mt19937_64 rng(9);
  for (std::size_t d : {4, 8, 16, 64}) {
    const auto f = random_tensor<double>({2, 3, 40}, rng, 0.001, 0.999);
    const std::size_t pairs = d / 2;
    const auto fused = carope_phases(FreqTensor<double>{f}, rotary(d, 3)).values;
    const auto composite = composite_phases(f, pairs);
    const auto brute = brute_force_phases(f, pairs);
    CHECK(testing::max_abs_diff(fused, composite) <= 1e-12);
    double worst = 0.0;
    for (std::size_t k = 0; k < brute.size(); ++k) worst = std::max(worst, std::abs(brute[k] - fused[k]));
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("carope_phases gradient matches central differences") {
  std::mt19937_64 rng(4);
  const testing::OpFn<double> fn = [](const auto& x) {
    return carope_phases(FreqTensor<double>{x[0]}, rotary(8, 2)).values;
  };
  const std::vector<Tensor<double>> in{random_tensor<double>({2, 2, 6}, rng, 0.05, 0.95)};
  const auto w = testing::random_weights(2 * 2 * 6 * 4, rng);
  const auto a = testing::tape_gradients(fn, in, w);
  const auto n = testing::numeric_gradients(fn, in, w, 1e-6);
  CHECK(testing::max_relative_error(a, n, 1e-2) <= 1e-6);
}

TEST_CASE("carope_base_freq and apply_rotary gradients match central differences") {
  std::mt19937_64 rng(6);
  const auto params = random_params<double>(4, 2, rng);
  const testing::OpFn<double> freq = [&](const auto& x) {
    CaropeParams<double> p = params;
    p.W = x[1];
    p.b = x[2];
    return carope_base_freq(x[0], p).values;
  };
  const std::vector<Tensor<double>> in{random_tensor<double>({2, 3, 4}, rng), params.W, params.b};
  const auto w = testing::random_weights(2 * 2 * 3, rng);
  CHECK(testing::max_relative_error(testing::tape_gradients(freq, in, w), testing::numeric_gradients(freq, in, w, 1e-6),
                                    1e-2) <= 1e-6);

  const testing::OpFn<double> rot = [](const auto& x) { return apply_rotary(x[0], PhaseTensor<double>{x[1]}); };
  const std::vector<Tensor<double>> rin{random_tensor<double>({2, 2, 3, 4}, rng), random_tensor<double>({2, 2, 3, 2}, rng, -3, 3)};
  const auto rw = testing::random_weights(2 * 2 * 3 * 4, rng);
  CHECK(testing::max_relative_error(testing::tape_gradients(rot, rin, rw), testing::numeric_gradients(rot, rin, rw, 1e-6),
                                    1e-2) <= 1e-6);
}

TEST_CASE("apply_rotary examples") {
  const Tensor<double> pair({1, 1, 1, 2}, {1.0, 0.0});
  const auto out = apply_rotary(pair, PhaseTensor<double>{Tensor<double>::full({1, 1, 1, 1}, std::numbers::pi / 2)});
  CHECK(std::abs(out[0]) <= 1e-6);
  CHECK(std::abs(out[1] - 1.0) <= 1e-6);

  std::mt19937_64 rng(2);
  const auto qk = random_tensor<float>({2, 3, 5, 8}, rng);
  const auto same = apply_rotary(qk, PhaseTensor<float>{Tensor<float>::zeros({2, 3, 5, 4})});
  CHECK(testing::max_abs_diff(same, qk) == 0.0);

  const auto phases = random_tensor<float>({2, 3, 5, 4}, rng, -50, 50);
  const auto rotated = apply_rotary(qk, PhaseTensor<float>{phases});
  for (std::size_t k = 0; k < qk.numel(); k += 2) {
    const double before = std::hypot(qk[k], qk[k + 1]);
    const double after = std::hypot(rotated[k], rotated[k + 1]);
    CHECK(std::abs(before - after) <= 1e-6);
  }

  CHECK_THROWS_AS(apply_rotary(qk, PhaseTensor<float>{Tensor<float>::zeros({2, 3, 5, 3})}), DimensionError);
}

TEST_CASE("initialized carope phases equal rope phases") {
  std::mt19937_64 rng(12);
  for (std::size_t d : {4, 8, 16, 64}) {
    const auto cfg = rotary(d, 2);
    const std::size_t d_model = 2 * d;
    const auto rope32 = rope_phases<float>(128, cfg).values;
    const auto rope64 = rope_phases<double>(128, cfg).values;
    const auto x32 = random_tensor<float>({2, 128, d_model}, rng, -3, 3);
    const auto x64 = random_tensor<double>({2, 128, d_model}, rng, -3, 3);
    const auto c32 = carope_phases(carope_base_freq(x32, carope_init_rope<float>(cfg, d_model)), cfg).values;
    const auto c64 = carope_phases(carope_base_freq(x64, carope_init_rope<double>(cfg, d_model)), cfg).values;
    double worst32 = 0.0, worst64 = 0.0;
    for (std::size_t k = 0; k < c32.numel(); ++k) {
      const std::size_t r = k % rope32.numel();
      worst32 = std::max(worst32, std::abs(static_cast<double>(c32[k]) - static_cast<double>(rope32[r])));
      worst64 = std::max(worst64, std::abs(c64[k] - rope64[r]));
    }
    INFO("d_head ", d);
    CHECK(worst32 <= 1e-5);
    CHECK(worst64 <= 1e-9);
  }
}

TEST_CASE("carope frequencies stay inside (0, 1) for extreme inputs") {
  std::mt19937_64 rng(13);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 200; ++trial) {
    auto params = random_params<float>(8, 2, rng, 5.0);
    std::vector<float> v(2 * 4 * 8);
    for (auto& x : v) x = coin(rng) ? 1e3f : -1e3f;
    const auto f = carope_base_freq(Tensor<float>({2, 4, 8}, v), params).values;
    for (float x : f.values()) {
      CHECK(x > 0.0f);
      CHECK(x < 1.0f);
    }
  }
}

TEST_CASE("carope phases are causal and context dependent") {
  std::mt19937_64 rng(14);
  const auto cfg = rotary(4, 2);
  const auto params = random_params<double>(6, 2, rng);
  const auto x = random_tensor<double>({1, 8, 6}, rng);
  std::vector<double> y(x.values().begin(), x.values().end());
  const std::size_t t = 4;
  for (std::size_t c = 0; c < 6; ++c) y[t * 6 + c] += 0.5;
  const auto a = carope_phases(carope_base_freq(x, params), cfg).values;
  const auto b = carope_phases(carope_base_freq(Tensor<double>(x.shape(), y), params), cfg).values;
  bool later_changed = false;
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t p = 0; p < 8; ++p)
      for (std::size_t i = 0; i < 2; ++i) {
        const std::size_t k = (h * 8 + p) * 2 + i;
        if (p <= t) CHECK(a[k] == b[k]);
        if (p > t && a[k] != b[k]) later_changed = true;
      }
  CHECK(later_changed);
}

TEST_CASE("ape tables") {
  const auto sin = sinusoidal_table<double>(16, 8);
  CHECK_FALSE(sin.trainable());
  CHECK(sin.max_positions() == 16);
  for (std::size_t j = 0; j < 8; ++j) CHECK(sin.table[j] == (j % 2 == 0 ? 0.0 : 1.0));
  for (double v : sin.table.values()) CHECK(std::abs(v) <= 1.0);
  CHECK(sin.table[3 * 8 + 2] == doctest::Approx(std::sin(3.0 / std::pow(10000.0, 2.0 / 8.0))).epsilon(1e-12));
  CHECK(sin.table[3 * 8 + 3] == doctest::Approx(std::cos(3.0 / std::pow(10000.0, 2.0 / 8.0))).epsilon(1e-12));

  std::mt19937_64 rng(0);
  const auto learn = learnable_table<double>(16, 8, 0.02, rng);
  CHECK(learn.trainable());
  CHECK(ApeTable<double>::lookup(learn.table, 16).shape() == Shape{16, 8});
  CHECK_THROWS_AS(ApeTable<double>::lookup(learn.table, 17), OutOfRangeError);
}
