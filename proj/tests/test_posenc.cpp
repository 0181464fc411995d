#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "adgen/posenc.hpp"
#include "gradcheck.hpp"

using namespace adgen;
using adgen::testing::gradcheck;
using adgen::testing::weighted_sum;

namespace {

// Independent reference for the log-binning bucket id, written directly from
// the three-case definition in long double:
//   d < H           -> d                  (H = buckets/2, exact region)
//   H <= d < Dmax   -> H + floor(H * log(d/H) / log(Dmax/H))
//   d >= Dmax       -> buckets - 1
int logbin_bucket_reference(long long d, int buckets, int dmax) {
  const long double H = static_cast<long double>(buckets) / 2.0L;
  if (d < static_cast<long long>(H)) return static_cast<int>(d);
  if (d >= dmax) return buckets - 1;
  const long double v = H + floorl(H * logl(static_cast<long double>(d) / H) /
                                   logl(static_cast<long double>(dmax) / H));
  return static_cast<int>(std::min(v, static_cast<long double>(buckets - 1)));
}

Tensor<double> randu(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = lo + (hi - lo) * rng.next_double();
  return t;
}

}  // namespace

TEST_CASE("softplus: positive, invertible, floored") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(softplus(-1000.0) > 0.0);
  CHECK(softplus(50.0) == doctest::Approx(50.0));
  for (double y : {0.1, 1.0, 5.0, 40.0})
    CHECK(softplus(inv_softplus(y)) == doctest::Approx(y).epsilon(1e-12));
}

TEST_CASE("alibi: scalar values and Toeplitz structure") {
  CHECK(bias_alibi(5, 5, 0.7) == 0.0);
  CHECK(bias_alibi(7, 3, 0.5) == doctest::Approx(-2.0));
  // full 8x8 matrix is Toeplitz: B[i][j] == B[i+1][j+1]
  for (Index i = 0; i + 1 < 8; ++i)
    for (Index j = 0; j + 1 < 8; ++j)
      CHECK(bias_alibi(i, j, 0.3) == bias_alibi(i + 1, j + 1, 0.3));
}

TEST_CASE("alibi: geometric slope ladder") {
  auto s = alibi_slopes(8, 1.0, true);
  for (int h = 0; h < 8; ++h) CHECK(s[h] == doctest::Approx(std::exp2(-(h + 1))));
  auto flat = alibi_slopes(4, 0.25, false);
  for (double v : flat) CHECK(v == 0.25);
}

TEST_CASE("kerple_log: scalar values, monotonicity, positivity guard") {
  CHECK(bias_kerple_log(9, 9, 2.0, 3.0) == 0.0);
  CHECK(bias_kerple_log(4, 3, 1.0, std::exp(1.0) - 1.0) == doctest::Approx(-1.0));
  double prev = 1.0;
  for (Index d = 0; d <= 256; ++d) {
    const double b = bias_kerple_log(d, 0, 0.7, 1.3);
    if (d > 0) CHECK(b < prev);  // strictly decreasing in distance
    prev = b;
  }
  CHECK_THROWS_AS(bias_kerple_log(1, 0, 0.0, 1.0), ValueError);
  CHECK_THROWS_AS(bias_kerple_log(1, 0, 1.0, -2.0), ValueError);
}

TEST_CASE("t5 buckets: golden cases") {
  CHECK(t5_bucket(0, 32, 128) == 0);
  CHECK(t5_bucket(300, 32, 128) == 31);   // clamp region
  CHECK(t5_bucket(15, 32, 128) == 15);    // last exact bucket
  CHECK(t5_bucket(16, 32, 128) == 16);    // first logarithmic bucket
  CHECK_THROWS_AS(t5_bucket(1, 31, 128), ValueError);  // odd bucket count
  CHECK_THROWS_AS(t5_bucket(1, 32, 16), ValueError);   // max_dist too small
  CHECK_THROWS_AS(t5_bucket(-1, 32, 128), ValueError);
}

TEST_CASE("t5 buckets: brute force against the reference over 0..512") {
  for (long long d = 0; d <= 512; ++d)
    CHECK(t5_bucket(d, 32, 128) == logbin_bucket_reference(d, 32, 128));
}

TEST_CASE("t5 buckets: non-decreasing, exact region one-to-one, surjective to max_dist") {
  std::set<int> seen;
  int prev = -1;
  for (long long d = 0; d <= 128; ++d) {
    const int b = t5_bucket(d, 32, 128);
    CHECK(b >= prev);
    prev = b;
    seen.insert(b);
    if (d < 16) CHECK(b == static_cast<int>(d));  // exact region: identity
  }
  CHECK(seen.size() == 32);  // all bucket ids hit within [0, max_dist]
}

TEST_CASE("fire: diagonal is position-independent f(0)") {
  RngStream rng(21, 0);
  std::vector<double> w1(32), b1(32), w2(32);
  for (auto& v : w1) v = 2 * rng.next_double() - 1;
  for (auto& v : b1) v = 2 * rng.next_double() - 1;
  for (auto& v : w2) v = 2 * rng.next_double() - 1;
  const double b2 = 0.3, c = 1.7, L = 5.5;
  const double f0 = fire_mlp(0.0, w1.data(), b1.data(), w2.data(), b2, 32);
  for (Index i : {Index(0), Index(3), Index(17), Index(400)})
    CHECK(bias_fire(i, i, w1.data(), b1.data(), w2.data(), b2, 32, c, L) ==
          doctest::Approx(f0).epsilon(1e-12));
}

TEST_CASE("fire: below the threshold the input reduces to psi(i-j)/psi(L)") {
  const double c = 2.0, L = 40.0;
  for (Index i = 0; i <= 40; ++i)
    for (Index j = 0; j <= i; j += 7) {
      const double expect = std::log1p(c * double(i - j)) / std::log1p(c * L);
      CHECK(fire_input(i, j, c, L) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("fire: not Toeplitz across the threshold") {
  RngStream rng(22, 0);
  std::vector<double> w1(32), b1(32), w2(32);
  for (auto& v : w1) v = 2 * rng.next_double() - 1;
  for (auto& v : b1) v = 2 * rng.next_double() - 1;
  for (auto& v : w2) v = 2 * rng.next_double() - 1;
  const double b2 = 0.0, c = 1.0, L = 4.0;
  // search the 64x64 grid for (i,j) and (i+s,j+s) with differing bias
  bool found = false;
  for (Index i = 0; i < 64 && !found; ++i)
    for (Index j = 0; j <= i && !found; ++j)
      for (Index s = 1; i + s < 64 && !found; ++s) {
        const double a = bias_fire(i, j, w1.data(), b1.data(), w2.data(), b2, 32, c, L);
        const double b = bias_fire(i + s, j + s, w1.data(), b1.data(), w2.data(), b2, 32, c, L);
        if (std::abs(a - b) > 1e-6) found = true;
      }
  CHECK(found);
}

TEST_CASE("fire: positivity guard") {
  std::vector<double> z(32, 0.0);
  CHECK_THROWS_AS(fire_input(1, 0, 0.0, 1.0), ValueError);
  CHECK_THROWS_AS(fire_input(1, 0, 1.0, -1.0), ValueError);
}

TEST_CASE("rope: position zero is the identity") {
  RngStream rng(23, 0);
  auto v = Tensor<double>::randn({8}, 1.0, rng);
  auto r = rope_apply(v, 0, 10000.0);
  for (Index i = 0; i < 8; ++i) CHECK(r[i] == doctest::Approx(v[i]).epsilon(1e-15));
}

TEST_CASE("rope: norm preservation") {
  RngStream rng(24, 0);
  for (int rep = 0; rep < 10; ++rep) {
    auto v = Tensor<double>::randn({16}, 1.0, rng);
    auto r = rope_apply(v, 1 + int(rng.below(500)), 10000.0);
    double n0 = 0, n1 = 0;
    for (Index i = 0; i < 16; ++i) {
      n0 += v[i] * v[i];
      n1 += r[i] * r[i];
    }
    CHECK(std::sqrt(n1) == doctest::Approx(std::sqrt(n0)).epsilon(1e-6));
  }
}

TEST_CASE("rope: inner products depend only on relative offset") {
  RngStream rng(25, 0);
  for (int rep = 0; rep < 20; ++rep) {
    auto q = Tensor<double>::randn({8}, 1.0, rng);
    auto k = Tensor<double>::randn({8}, 1.0, rng);
    const Index i = Index(rng.below(100)), j = Index(rng.below(100));
    const Index s = Index(rng.below(200));
    auto qi = rope_apply(q, i, 10000.0), kj = rope_apply(k, j, 10000.0);
    auto qs = rope_apply(q, i + s, 10000.0), ks = rope_apply(k, j + s, 10000.0);
    double d0 = 0, d1 = 0;
    for (Index t = 0; t < 8; ++t) {
      d0 += qi[t] * kj[t];
      d1 += qs[t] * ks[t];
    }
    CHECK(d1 == doctest::Approx(d0).epsilon(1e-5));
  }
}

TEST_CASE("rope: odd dimension raises") {
  auto v = Tensor<double>::zeros({7});
  CHECK_THROWS_AS(rope_apply(v, 3, 10000.0), ShapeError);
}

TEST_CASE("rope_rotate: matches per-vector application and round-trips gradients") {
  RngStream rng(26, 0);
  const Index heads = 2, seq = 3, dh = 4;
  auto x = Tensor<double>::randn({2 * heads, seq, dh}, 1.0, rng);
  std::vector<PositionMap> maps{{0, 2, 5}, {1, 3, 9}};
  auto out = rope_rotate(x, maps, heads, 100.0);
  for (Index g = 0; g < 2 * heads; ++g)
    for (Index s = 0; s < seq; ++s) {
      Tensor<double> v({dh});
      for (Index t = 0; t < dh; ++t) v[t] = x[(g * seq + s) * dh + t];
      auto r = rope_apply(v, maps[size_t(g / heads)][size_t(s)], 100.0);
      for (Index t = 0; t < dh; ++t)
        CHECK(out[(g * seq + s) * dh + t] == doctest::Approx(r[t]).epsilon(1e-12));
    }

  auto w = randu({2 * heads, seq, dh}, rng);
  auto res = gradcheck({x.clone()}, [&](auto& in, Tape<double>* tape) {
    return weighted_sum(rope_rotate(in[0], maps, heads, 100.0, tape), w, tape);
  });
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("positions: full-range sample is the identity") {
  RngStream rng(27, 0);
  auto p = sample_positions(6, 6, rng);
  for (Index i = 0; i < 6; ++i) CHECK(p[size_t(i)] == i);
  CHECK(identity_positions(4) == PositionMap{0, 1, 2, 3});
}

TEST_CASE("positions: strictly increasing within range") {
  RngStream rng(28, 0);
  for (int rep = 0; rep < 200; ++rep) {
    auto p = sample_positions(3, 10, rng);
    REQUIRE(p.size() == 3);
    CHECK(p[0] < p[1]);
    CHECK(p[1] < p[2]);
    CHECK(p[0] >= 0);
    CHECK(p[2] < 10);
  }
}

TEST_CASE("positions: capacity guard") {
  RngStream rng(29, 0);
  CHECK_THROWS_AS(sample_positions(11, 10, rng), ValueError);
}

TEST_CASE("positions: pairs from [0,5) are uniform over 100k draws") {
  RngStream rng(30, 0);
  std::map<std::pair<Index, Index>, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    auto p = sample_positions(2, 5, rng);
    ++counts[{p[0], p[1]}];
  }
  CHECK(counts.size() == 10);
  for (const auto& [pair, c] : counts) {
    const double freq = double(c) / draws;
    CHECK(freq == doctest::Approx(0.1).epsilon(0.1));  // 0.1 +- 0.01
  }
}

TEST_CASE("build_bias: zero-bias variant yields an all-zero matrix") {
  PESpec spec;
  spec.variant = PEVariant::NoPE;
  PEParams<float> params;
  auto b = build_bias(spec, params, identity_positions(5), 3);
  CHECK(b.shape() == Shape{3, 5, 5});
  for (Index i = 0; i < b.numel(); ++i) CHECK(b[i] == 0.0f);
}

TEST_CASE("build_bias: alibi lower triangle golden matrix") {
  PESpec spec;
  spec.variant = PEVariant::Alibi;
  spec.alibi_r = 1.0;
  spec.alibi_geometric = false;
  PEParams<float> params;
  auto b = build_bias(spec, params, identity_positions(4), 1);
  const float expect[4][4] = {
      {0, 0, 0, 0}, {-1, 0, 0, 0}, {-2, -1, 0, 0}, {-3, -2, -1, 0}};
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) CHECK(b[i * 4 + j] == expect[i][j]);
}

TEST_CASE("build_bias: rotary variant is rejected") {
  PESpec spec;
  spec.variant = PEVariant::RoPE;
  PEParams<float> params;
  CHECK_THROWS_AS(build_bias(spec, params, identity_positions(4), 1), ValueError);
}

TEST_CASE("build_bias: kerple matches the scalar formula on a randomized map") {
  RngStream rng(31, 0);
  PESpec spec;
  spec.variant = PEVariant::KerpleLog;
  auto params = init_pe_params<double>(spec, 2, 5.0, rng);
  params.kerple_raw_r1[0] = 0.3;
  params.kerple_raw_r1[1] = -0.2;
  params.kerple_raw_r2[0] = 0.9;
  params.kerple_raw_r2[1] = 0.1;
  auto pos = sample_positions(6, 40, rng);
  auto b = build_bias(spec, params, pos, 2);
  for (Index h = 0; h < 2; ++h) {
    const double r1 = softplus(params.kerple_raw_r1[h]);
    const double r2 = softplus(params.kerple_raw_r2[h]);
    for (Index a = 0; a < 6; ++a)
      for (Index q = 0; q <= a; ++q)
        CHECK(b[(h * 6 + a) * 6 + q] ==
              doctest::Approx(bias_kerple_log(pos[size_t(a)], pos[size_t(q)], r1, r2))
                  .epsilon(1e-12));
  }
}

TEST_CASE("build_bias: t5 matches the scalar formula on a randomized map") {
  RngStream rng(32, 0);
  PESpec spec;
  spec.variant = PEVariant::T5Bucket;
  spec.t5_buckets = 32;
  spec.t5_max_dist = 128;
  auto params = init_pe_params<double>(spec, 2, 5.0, rng);
  for (Index i = 0; i < params.t5_table.numel(); ++i)
    params.t5_table[i] = 2 * rng.next_double() - 1;
  auto pos = sample_positions(7, 300, rng);
  auto b = build_bias(spec, params, pos, 2);
  for (Index h = 0; h < 2; ++h)
    for (Index a = 0; a < 7; ++a)
      for (Index q = 0; q <= a; ++q)
        CHECK(b[(h * 7 + a) * 7 + q] ==
              doctest::Approx(bias_t5(pos[size_t(a)], pos[size_t(q)], 32, 128,
                                      params.t5_table.data() + h * 32))
                  .epsilon(1e-12));
}

TEST_CASE("build_bias: fire matches the scalar formula on a randomized map") {
  RngStream rng(33, 0);
  PESpec spec;
  spec.variant = PEVariant::FIRE;
  auto params = init_pe_params<double>(spec, 4, 5.0, rng);
  for (Index k = 0; k < 32; ++k) params.fire_w2[k] = 2 * rng.next_double() - 1;
  params.fire_b2[0] = 0.25;
  auto pos = sample_positions(8, 64, rng);
  auto b = build_bias(spec, params, pos, 4);
  CHECK(b.shape() == Shape{1, 8, 8});  // single shared block across heads
  const double c = softplus(params.fire_raw_c[0]);
  const double L = softplus(params.fire_raw_L[0]);
  for (Index a = 0; a < 8; ++a)
    for (Index q = 0; q <= a; ++q)
      CHECK(b[a * 8 + q] ==
            doctest::Approx(bias_fire(pos[size_t(a)], pos[size_t(q)], params.fire_w1.data(),
                                      params.fire_b1.data(), params.fire_w2.data(),
                                      params.fire_b2[0], 32, c, L))
                .epsilon(1e-9));
}

TEST_CASE("build_bias: identity map rebuild is bit-exact") {
  RngStream rng(34, 0);
  PESpec spec;
  spec.variant = PEVariant::KerpleLog;
  auto params = init_pe_params<float>(spec, 2, 5.0, rng);
  auto b1 = build_bias(spec, params, identity_positions(9), 2);
  auto b2 = build_bias(spec, params, identity_positions(9), 2);
  for (Index i = 0; i < b1.numel(); ++i) CHECK(b1[i] == b2[i]);
}

TEST_CASE("gradients: kerple raw parameters pass finite differences") {
  RngStream rng(35, 0);
  auto raw1 = randu({2}, rng, -0.5, 1.0);
  auto raw2 = randu({2}, rng, -0.5, 1.0);
  auto pos = sample_positions(5, 20, rng);
  auto w = randu({2, 5, 5}, rng);
  auto res = gradcheck({raw1, raw2}, [&](auto& in, Tape<double>* tape) {
    return weighted_sum(build_bias_kerple(in[0], in[1], pos, tape), w, tape);
  });
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("gradients: t5 table passes finite differences and receives signal") {
  RngStream rng(36, 0);
  auto table = randu({2, 32}, rng);
  auto pos = identity_positions(10);
  auto w = randu({2, 10, 10}, rng);
  auto res = gradcheck({table}, [&](auto& in, Tape<double>* tape) {
    return weighted_sum(build_bias_t5(in[0], pos, 128, tape), w, tape);
  });
  CHECK(res.max_rel_err < 1e-3);

  Tape<double> tape;
  table.set_requires_grad(true);
  auto loss = weighted_sum(build_bias_t5(table, pos, 128, &tape), w, &tape);
  tape.backward(loss);
  double norm = 0;
  for (Index i = 0; i < table.numel(); ++i) norm += std::abs(table.grad()[i]);
  CHECK(norm > 0.0);
}

TEST_CASE("gradients: all fire parameters pass finite differences") {
  RngStream rng(37, 0);
  const Index hidden = 8;  // smaller MLP keeps the FD sweep quick
  auto w1 = randu({hidden}, rng);
  auto b1 = randu({hidden}, rng);
  auto w2 = randu({hidden}, rng);
  auto b2 = randu({1}, rng);
  auto raw_c = randu({1}, rng, 0.2, 1.0);
  auto raw_L = randu({1}, rng, 1.3, 1.7);  // softplus value ~1.5-1.9, off integers
  auto pos = sample_positions(6, 24, rng);
  auto w = randu({1, 6, 6}, rng);
  auto res = gradcheck({w1, b1, w2, b2, raw_c, raw_L}, [&](auto& in, Tape<double>* tape) {
    return weighted_sum(
        build_bias_fire(in[0], in[1], in[2], in[3], in[4], in[5], pos, tape), w, tape);
  });
  CHECK(res.max_rel_err < 1e-3);
}
