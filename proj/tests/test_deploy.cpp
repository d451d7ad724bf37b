#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "cnn_util.hpp"
#include "cnnbp/deploy.hpp"
#include "cnnbp/encoder.hpp"
#include "cnnbp/error.hpp"
#include "cnnbp/rng.hpp"

using namespace cnnbp;
using namespace cnnbp::deploy;
using testing_util::random_params;
using testing_util::random_window;

namespace {

std::vector<bool> plane_bits(const BitPlane& b) {
  std::vector<bool> out(b.size());
  for (std::size_t k = 0; k < b.size(); ++k) out[k] = b.get(k);
  return out;
}

BitPlane plane_from(const std::vector<bool>& bits) {
  BitPlane b(bits.size());
  for (std::size_t k = 0; k < bits.size(); ++k) b.set(k, bits[k]);
  return b;
}

void expect_tail_clear(const BitPlane& b) {
  const auto w = b.words();
  if (b.size() % 64 != 0 && !w.empty()) {
    EXPECT_EQ(w.back() >> (b.size() % 64), 0u);
  }
}

// Code vector -> planes.
std::pair<BitPlane, BitPlane> planes_of(const std::vector<int>& codes) {
  BitPlane s(codes.size()), v(codes.size());
  for (std::size_t k = 0; k < codes.size(); ++k) {
    const TernaryCode c = TernaryCode::from_value(codes[k]);
    s.set(k, c.sign);
    v.set(k, c.value);
  }
  return {s, v};
}

std::int64_t naive_dot(const std::vector<int>& a, const std::vector<int>& b) {
  std::int64_t s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

// Enumerates vector number `n` of {-1, 0, +1}^len in base 3.
std::vector<int> ternary_vector(std::uint64_t n, std::size_t len) {
  std::vector<int> v(len);
  for (std::size_t k = 0; k < len; ++k) {
    v[k] = static_cast<int>(n % 3) - 1;
    n /= 3;
  }
  return v;
}

cnn::CnnShape shape(std::uint32_t p, std::uint32_t m, std::uint32_t len) {
  cnn::CnnShape s;
  s.p = p;
  s.m = m;
  s.history_len = len;
  return s;
}

DeployedHelper random_helper(Rng& rng) {
  DeployedHelper h;
  h.p = static_cast<std::uint32_t>(2 + rng.below(7));
  h.m = static_cast<std::uint32_t>(1 + rng.below(40));
  h.history_len = static_cast<std::uint32_t>(1 + rng.below(80));
  h.table.p = h.p;
  h.table.m = h.m;
  const std::size_t tbits = static_cast<std::size_t>(h.table.rows()) * h.m;
  const std::size_t lbits = static_cast<std::size_t>(h.history_len) * h.m;
  std::vector<int> tc(tbits), lc(lbits);
  for (int& c : tc) c = static_cast<int>(rng.below(3)) - 1;
  for (int& c : lc) c = static_cast<int>(rng.below(3)) - 1;
  std::tie(h.table.sign, h.table.value) = planes_of(tc);
  std::tie(h.l2_sign, h.l2_value) = planes_of(lc);
  const std::int64_t bound = static_cast<std::int64_t>(lbits);
  h.threshold = rng.range(-bound - 1, bound + 1);
  return h;
}

}  // namespace

// ------------------------------------------------------------ ternary codes

TEST(TernaryCode, EncodingTable) {
  EXPECT_EQ(TernaryCode::from_value(0).packed(), 0b00);
  EXPECT_EQ(TernaryCode::from_value(-1).packed(), 0b01);
  EXPECT_EQ(TernaryCode::from_value(1).packed(), 0b11);
  for (int v : {-1, 0, 1}) {
    const TernaryCode c = TernaryCode::from_value(v);
    EXPECT_EQ(c.to_value(), v);
    EXPECT_EQ(TernaryCode::from_packed(c.packed()), c);
  }
}

TEST(TernaryCode, IllegalPatternRejected) {
  EXPECT_THROW(TernaryCode::from_packed(0b10), FormatError);
  EXPECT_THROW(TernaryCode::from_packed(4), FormatError);
}

// --------------------------------------------------------------- bit planes

TEST(BitPlane, ShiftsMatchNaiveModel) {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    std::vector<bool> bits(n);
    for (std::size_t k = 0; k < n; ++k) bits[k] = rng.coin();
    const std::size_t s = rng.below(n + 70);

    BitPlane up = plane_from(bits);
    up.shift_up(s);
    std::vector<bool> want_up(n, false);
    for (std::size_t k = 0; k + s < n; ++k) want_up[k + s] = bits[k];
    EXPECT_EQ(plane_bits(up), want_up);
    expect_tail_clear(up);

    BitPlane down = plane_from(bits);
    down.shift_down(s);
    std::vector<bool> want_down(n, false);
    for (std::size_t k = s; k < n; ++k) want_down[k - s] = bits[k];
    EXPECT_EQ(plane_bits(down), want_down);
    expect_tail_clear(down);
  }
}

TEST(BitPlane, CopyBitsMatchesNaiveModel) {
  Rng rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    std::vector<bool> a(n), b(n);
    for (std::size_t k = 0; k < n; ++k) {
      a[k] = rng.coin();
      b[k] = rng.coin();
    }
    const std::size_t count = rng.below(n + 1);
    const std::size_t from = rng.below(n - count + 1);
    const std::size_t to = rng.below(n - count + 1);
    BitPlane dst = plane_from(b);
    dst.copy_bits(plane_from(a), from, to, count);
    for (std::size_t k = 0; k < count; ++k) b[to + k] = a[from + k];
    EXPECT_EQ(plane_bits(dst), b);
  }
}

TEST(BitPlane, ByteRoundTrip) {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = rng.below(200);
    std::vector<bool> bits(n);
    for (std::size_t k = 0; k < n; ++k) bits[k] = rng.coin();
    const BitPlane b = plane_from(bits);
    const auto bytes = b.to_bytes();
    ASSERT_EQ(bytes.size(), (n + 7) / 8);
    for (std::size_t k = 0; k < n; ++k) EXPECT_EQ(((bytes[k / 8] >> (k % 8)) & 1) != 0, bits[k]);
    EXPECT_EQ(BitPlane::from_bytes(bytes, n), b);
  }
}

// ------------------------------------------------------------------ folding

TEST(Table, MatchesNormalizeThenQuantize) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = shape(static_cast<std::uint32_t>(2 + rng.below(6)), static_cast<std::uint32_t>(1 + rng.below(20)), 4);
    const double q = rng.uniform(0.1, 0.95);
    const cnn::FpCnnParams p = random_params(rng, s, cnn::Mode::ternary, q);
    const LookupTable t = build_table(p);
    ASSERT_EQ(t.size_bits(), 2u * s.index_space() * s.m);
    for (std::uint32_t i = 0; i < s.index_space(); ++i) {
      for (std::uint32_t j = 0; j < s.m; ++j) {
        // Independent evaluation of the normalization.
        const double x = p.w1[i * s.m + j] + p.b1[j];
        const double y = (x - p.mean1[j]) * p.gamma1[j] / std::sqrt(p.var1[j] + cnn::kNormEps) + p.beta1[j];
        const int want = y >= q ? 1 : (y <= -q ? -1 : 0);
        EXPECT_EQ(t.at(i, j).to_value(), want);
      }
    }
  }
}

TEST(Table, NonFiniteParametersRejected) {
  Rng rng(22);
  cnn::FpCnnParams p = random_params(rng, shape(3, 2, 4), cnn::Mode::ternary);
  p.w1[3] = std::nan("");
  EXPECT_THROW(build_table(p), ConfigError);
}

// --------------------------------------------------------------------- FIFO

TEST(Fifo, PushMatchesAgeModel) {
  Rng rng(31);
  const auto s = shape(4, 3, 7);
  const cnn::FpCnnParams p = random_params(rng, s, cnn::Mode::ternary, 0.5);
  const LookupTable t = build_table(p);
  FifoBuffer fifo(s.history_len, s.m);
  std::deque<std::uint32_t> recent;  // front = newest
  for (int step = 0; step < 60; ++step) {
    const auto idx = static_cast<std::uint32_t>(rng.below(s.index_space()));
    fifo.push_row(t, idx);
    recent.push_front(idx);
    if (recent.size() > s.history_len) recent.pop_back();
    for (std::uint32_t age = 0; age < s.history_len; ++age) {
      for (std::uint32_t j = 0; j < s.m; ++j) {
        const int want = age < recent.size() ? t.at(recent[age], j).to_value() : 0;
        EXPECT_EQ(fifo.at(age, j).to_value(), want);
      }
    }
  }
}

TEST(Fifo, RollbackRestoresEarlierState) {
  Rng rng(32);
  const auto s = shape(5, 4, 20);
  const LookupTable t = build_table(random_params(rng, s, cnn::Mode::ternary, 0.5));
  for (int trial = 0; trial < 100; ++trial) {
    FifoBuffer fifo(s.history_len, s.m);
    std::vector<FifoBuffer> states{fifo};
    const std::size_t pushes = rng.below(50);
    for (std::size_t k = 0; k < pushes; ++k) {
      fifo.push_row(t, static_cast<std::uint32_t>(rng.below(s.index_space())));
      states.push_back(fifo);
    }
    EXPECT_EQ(fifo.recoverable(), std::min<std::size_t>(pushes, s.history_len));
    const std::size_t n = rng.below(fifo.recoverable() + 1);
    fifo.rollback(n);
    EXPECT_TRUE(fifo.same_contents(states[pushes - n]));
    // Pushing again after a rollback behaves like a fresh timeline.
    fifo.push_row(t, 1);
    FifoBuffer replay = states[pushes - n];
    replay.push_row(t, 1);
    EXPECT_TRUE(fifo.same_contents(replay));
  }
}

TEST(Fifo, RollbackLimits) {
  Rng rng(33);
  const auto s = shape(3, 2, 5);
  const LookupTable t = build_table(random_params(rng, s, cnn::Mode::ternary, 0.5));
  FifoBuffer fifo(s.history_len, s.m);
  EXPECT_EQ(fifo.recovery_depth(), 5u);
  EXPECT_THROW(fifo.rollback(1), ContractError);
  for (int k = 0; k < 9; ++k) fifo.push_row(t, static_cast<std::uint32_t>(k % 8));
  EXPECT_EQ(fifo.recoverable(), 5u);
  EXPECT_THROW(fifo.rollback(6), ContractError);
  EXPECT_NO_THROW(fifo.rollback(5));

  FifoBuffer shallow(s.history_len, s.m, 2);
  for (int k = 0; k < 4; ++k) shallow.push_row(t, 3);
  EXPECT_EQ(shallow.recoverable(), 2u);

  FifoBuffer none(s.history_len, s.m, 0);
  none.push_row(t, 3);
  EXPECT_EQ(none.recoverable(), 0u);
  EXPECT_THROW(none.rollback(1), ContractError);
}

TEST(Fifo, UpdateEncodesBranch) {
  Rng rng(34);
  const auto s = shape(6, 3, 4);
  const LookupTable t = build_table(random_params(rng, s, cnn::Mode::ternary, 0.5));
  FifoBuffer a(s.history_len, s.m), b(s.history_len, s.m);
  fifo_update(a, t, 0x4005a3, true);
  b.push_row(t, encoder::encode_index(0x4005a3, true, s.p));
  EXPECT_TRUE(a.same_contents(b));
  rollback(a, 1);
  EXPECT_TRUE(a.same_contents(FifoBuffer(s.history_len, s.m)));
}

// ---------------------------------------------------------------- threshold

TEST(Threshold, AgreesWithNormalizationForEveryProduct) {
  Rng rng(41);
  int negated = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto s = shape(3, static_cast<std::uint32_t>(1 + rng.below(6)), static_cast<std::uint32_t>(1 + rng.below(12)));
    cnn::FpCnnParams p = random_params(rng, s, cnn::Mode::ternary);
    p.mean2 = rng.uniform(-40.0, 40.0);
    const Threshold th = derive_threshold(p);
    EXPECT_EQ(th.negate, p.gamma2 < 0);
    negated += th.negate;
    const std::int64_t bound = static_cast<std::int64_t>(s.m) * s.history_len;
    EXPECT_GE(th.t, -bound - 1);
    EXPECT_LE(th.t, bound);
    for (std::int64_t P = -bound; P <= bound; ++P) {
      const std::int64_t Pp = th.negate ? -P : P;
      ASSERT_EQ(Pp > th.t, p.normalize2(static_cast<double>(P)) > 0.0) << "P=" << P;
    }
  }
  EXPECT_GT(negated, 50);
}

TEST(Threshold, ClampsAtEnds) {
  Rng rng(42);
  const auto s = shape(3, 2, 3);
  cnn::FpCnnParams p = random_params(rng, s, cnn::Mode::ternary);
  p.gamma2 = 1.0;
  p.mean2 = 0.0;
  p.beta2 = 1e6;
  EXPECT_EQ(derive_threshold(p).t, -7);
  p.beta2 = -1e6;
  EXPECT_EQ(derive_threshold(p).t, 6);
  p.gamma2 = 0.0;
  EXPECT_THROW(derive_threshold(p), ConfigError);
}

// ---------------------------------------------------------------- inference

TEST(PopcountDot, ExhaustiveSmallVectors) {
  // Every pair of code vectors for lengths up to 6.
  for (std::size_t len = 1; len <= 6; ++len) {
    std::uint64_t count = 1;
    for (std::size_t k = 0; k < len; ++k) count *= 3;
    std::vector<std::pair<BitPlane, BitPlane>> planes;
    std::vector<std::vector<int>> vecs;
    for (std::uint64_t n = 0; n < count; ++n) {
      vecs.push_back(ternary_vector(n, len));
      planes.push_back(planes_of(vecs.back()));
    }
    for (std::uint64_t a = 0; a < count; ++a) {
      for (std::uint64_t b = 0; b < count; ++b) {
        ASSERT_EQ(popcount_dot(planes[a].first, planes[a].second, planes[b].first, planes[b].second),
                  naive_dot(vecs[a], vecs[b]));
      }
    }
  }
}

TEST(PopcountDot, ExhaustiveOneSideUpToTwelve) {
  // Every activation vector for lengths 7..12 against fixed weight patterns.
  Rng rng(51);
  for (std::size_t len = 7; len <= 12; ++len) {
    std::vector<std::vector<int>> weights{std::vector<int>(len, 1), std::vector<int>(len, -1),
                                          std::vector<int>(len, 0)};
    std::vector<int> alt(len);
    for (std::size_t k = 0; k < len; ++k) alt[k] = static_cast<int>(k % 3) - 1;
    weights.push_back(alt);
    for (int r = 0; r < 4; ++r) {
      std::vector<int> w(len);
      for (int& c : w) c = static_cast<int>(rng.below(3)) - 1;
      weights.push_back(w);
    }
    std::uint64_t count = 1;
    for (std::size_t k = 0; k < len; ++k) count *= 3;
    for (const auto& w : weights) {
      const auto [ws, wv] = planes_of(w);
      for (std::uint64_t n = 0; n < count; ++n) {
        const auto a = ternary_vector(n, len);
        const auto [as, av] = planes_of(a);
        ASSERT_EQ(popcount_dot(as, av, ws, wv), naive_dot(a, w));
      }
    }
  }
}

TEST(PopcountDot, LongRandomVectors) {
  Rng rng(52);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t len = 1 + rng.below(7000);
    std::vector<int> a(len), b(len);
    for (std::size_t k = 0; k < len; ++k) {
      a[k] = static_cast<int>(rng.below(3)) - 1;
      b[k] = static_cast<int>(rng.below(3)) - 1;
    }
    const auto [as, av] = planes_of(a);
    const auto [bs, bv] = planes_of(b);
    EXPECT_EQ(popcount_dot(as, av, bs, bv), naive_dot(a, b));
  }
}

TEST(Deployed, MatchesTernaryReference) {
  Rng rng(61);
  for (int model = 0; model < 40; ++model) {
    const auto s = shape(static_cast<std::uint32_t>(2 + rng.below(7)), static_cast<std::uint32_t>(1 + rng.below(33)),
                         static_cast<std::uint32_t>(1 + rng.below(60)));
    cnn::FpCnnParams p = random_params(rng, s, cnn::Mode::ternary, rng.uniform(0.2, 0.9));
    p.mean2 = rng.uniform(-5.0, 5.0);
    const cnn::TernaryCnnParams tp = cnn::make_ternary(p);
    const DeployedHelper h = build_helper(p);
    const bool negate = p.gamma2 < 0;
    for (int w = 0; w < 200; ++w) {
      const auto window = random_window(rng, s);
      FifoBuffer fifo = h.make_fifo(0);
      for (std::int32_t idx : window) {
        if (idx >= 0) fifo.push_row(h.table, static_cast<std::uint32_t>(idx));
      }
      const Prediction got = predict(h, fifo);
      const cnn::TernaryResult want = cnn::forward_ternary_reference(tp, window);
      ASSERT_EQ(got.taken, want.taken);
      ASSERT_EQ(got.P, negate ? -want.P : want.P);
    }
  }
}

TEST(Deployed, StorageFigures) {
  EXPECT_EQ(storage_bytes(8, 2, 200), 336u);
  EXPECT_EQ(storage_bytes(8, 32, 200), 5256u);
  EXPECT_THROW(storage_bytes(0, 2, 200), ConfigError);
  EXPECT_THROW(storage_bytes(8, 0, 200), ConfigError);
  EXPECT_THROW(storage_bytes(8, 2, 0), ConfigError);
}

// -------------------------------------------------------------------- blobs

TEST(Blob, RoundTripRandomHelpers) {
  Rng rng(71);
  for (int trial = 0; trial < 1000; ++trial) {
    const DeployedHelper h = random_helper(rng);
    const auto bytes = serialize_helper(h);
    ASSERT_EQ(bytes.size(), blob_size(h.p, h.m, h.history_len));
    EXPECT_EQ(deserialize_helper(bytes), h);
  }
}

TEST(Blob, HeaderLayout) {
  EXPECT_EQ(blob_size(8, 2, 200), 252u);
  Rng rng(72);
  const DeployedHelper h = build_helper(random_params(rng, shape(8, 2, 200), cnn::Mode::ternary));
  const auto b = serialize_helper(h);
  ASSERT_EQ(b.size(), 252u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "CNNH");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5], 8);
  EXPECT_EQ(b[6] | (b[7] << 8), 2);
  EXPECT_EQ(b[8] | (b[9] << 8), 200);
  for (int i = 10; i < 16; ++i) EXPECT_EQ(b[i], 0);
  std::int64_t t = 0;
  for (int i = 0; i < 8; ++i) t |= static_cast<std::int64_t>(b[16 + i]) << (8 * i);
  EXPECT_EQ(t, h.threshold);
}

namespace {

std::size_t error_offset(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize_helper(bytes);
  } catch (const FormatError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "expected FormatError";
  return SIZE_MAX;
}

}  // namespace

TEST(Blob, CorruptionDetected) {
  Rng rng(73);
  DeployedHelper h = random_helper(rng);
  h.p = 3;
  h.m = 3;
  h.history_len = 5;
  h.table.p = 3;
  h.table.m = 3;
  std::vector<int> tc(24, 0), lc(15, 0);
  tc[0] = 1;
  lc[4] = -1;
  std::tie(h.table.sign, h.table.value) = planes_of(tc);
  std::tie(h.l2_sign, h.l2_value) = planes_of(lc);
  h.threshold = 2;
  const auto good = serialize_helper(h);
  ASSERT_EQ(good.size(), 24u + 3 + 3 + 2 + 2);
  ASSERT_EQ(deserialize_helper(good), h);

  auto bad = good;
  bad[0] = 'X';
  EXPECT_EQ(error_offset(bad), 0u);
  bad = good;
  bad[4] = 2;
  EXPECT_EQ(error_offset(bad), 4u);
  bad = good;
  bad[5] = 1;
  EXPECT_EQ(error_offset(bad), 5u);
  bad = good;
  bad[12] = 7;
  EXPECT_EQ(error_offset(bad), 12u);
  bad = good;
  bad.pop_back();
  EXPECT_EQ(error_offset(bad), bad.size());
  bad = good;
  bad.push_back(0);
  EXPECT_EQ(error_offset(bad), good.size());
  bad = good;
  bad[16] = 16;  // 5 * 3 + 1
  EXPECT_EQ(error_offset(bad), 16u);
  // Table sign bit 9 set without its value bit: pattern 10.
  bad = good;
  bad[24 + 1] |= 0x02;
  EXPECT_EQ(error_offset(bad), 25u);
  // Layer-2 sign plane: bit 15 is padding in a 15-bit plane.
  bad = good;
  bad[30 + 1] |= 0x80;
  EXPECT_EQ(error_offset(bad), 31u);
  // Layer-2 sign bit 2 without value.
  bad = good;
  bad[30] |= 0x04;
  EXPECT_EQ(error_offset(bad), 30u);
}
