#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <algorithm>
#include <set>
#include <sstream>

#include "cnnbp/baseline.hpp"
#include "cnnbp/error.hpp"
#include "cnnbp/rng.hpp"
#include "cnnbp/trace.hpp"

using namespace cnnbp;
using namespace cnnbp::baseline;

namespace {

// Straightforward TAGE-lite model: keeps the raw direction history and
// recomputes every folded register from scratch for each lookup.
class OracleTage {
 public:
  explicit OracleTage(const TageLiteConfig& c) : c_(c) {
    const double ratio = static_cast<double>(c.max_history) / c.min_history;
    for (std::uint32_t i = 0; i < c.num_tagged_tables; ++i) {
      auto l = static_cast<std::uint32_t>(
          std::lround(c.min_history * std::pow(ratio, static_cast<double>(i) / (c.num_tagged_tables - 1))));
      if (!len_.empty() && l <= len_.back()) l = len_.back() + 1;
      len_.push_back(l);
    }
    ib_ = 0;
    while ((1u << ib_) < c.table_entries) ++ib_;
    tab_.assign(c.num_tagged_tables, std::vector<TageEntry>(c.table_entries));
    bim_.assign(c.bimodal_entries, 1);
  }

  const std::vector<std::uint32_t>& lengths() const { return len_; }

  std::uint32_t fold(std::uint32_t length, std::uint32_t width) const {
    std::uint32_t v = 0;
    for (std::uint32_t a = 0; a < length && a < hist_.size(); ++a) {
      if (hist_[hist_.size() - 1 - a]) v ^= 1u << (a % width);
    }
    return v;
  }
  std::uint32_t index(std::uint32_t t, std::uint64_t ip) const {
    return (fold(len_[t], ib_) ^ static_cast<std::uint32_t>(ip)) & (c_.table_entries - 1);
  }
  std::uint32_t tag(std::uint32_t t, std::uint64_t ip) const {
    const auto pc = static_cast<std::uint32_t>(ip ^ (ip >> ib_));
    return (pc ^ fold(len_[t], c_.tag_bits) ^ (fold(len_[t], c_.tag_bits - 1) << 1)) & ((1u << c_.tag_bits) - 1);
  }

  // Predicts and trains on one branch; returns the prediction.
  bool step(std::uint64_t ip, bool taken, int* provider_out = nullptr) {
    const std::uint32_t n = c_.num_tagged_tables;
    const std::uint8_t mid = static_cast<std::uint8_t>(1u << (c_.counter_bits - 1));
    std::vector<std::uint32_t> idx(n), tg(n);
    for (std::uint32_t t = 0; t < n; ++t) {
      idx[t] = index(t, ip);
      tg[t] = tag(t, ip);
    }
    const std::uint32_t bi = static_cast<std::uint32_t>(ip) & (c_.bimodal_entries - 1);
    std::vector<int> hits;
    for (int t = static_cast<int>(n) - 1; t >= 0; --t) {
      const auto& e = tab_[t][idx[t]];
      if (e.valid && e.tag == tg[t]) hits.push_back(t);
    }
    const bool base = bim_[bi] >= 2;
    const int prov = hits.empty() ? -1 : hits[0];
    const bool pred = prov < 0 ? base : tab_[prov][idx[prov]].counter >= mid;
    const bool alt = hits.size() < 2 ? base : tab_[hits[1]][idx[hits[1]]].counter >= mid;
    if (provider_out) *provider_out = prov;

    const int cmax = (1 << c_.counter_bits) - 1, umax = (1 << c_.useful_bits) - 1;
    if (prov >= 0) {
      auto& e = tab_[prov][idx[prov]];
      e.counter = static_cast<std::uint8_t>(std::clamp(e.counter + (taken ? 1 : -1), 0, cmax));
      if (pred != alt) e.useful = static_cast<std::uint8_t>(std::clamp(e.useful + (pred == taken ? 1 : -1), 0, umax));
    } else {
      bim_[bi] = static_cast<std::uint8_t>(std::clamp(bim_[bi] + (taken ? 1 : -1), 0, 3));
    }
    if (pred != taken) {
      int target = -1;
      for (int t = prov + 1; t < static_cast<int>(n); ++t) {
        if (tab_[t][idx[t]].useful == 0) {
          target = t;
          break;
        }
      }
      if (target >= 0) {
        tab_[target][idx[target]] = TageEntry{tg[target], static_cast<std::uint8_t>(taken ? mid : mid - 1), 0, true};
      } else {
        for (int t = prov + 1; t < static_cast<int>(n); ++t) {
          auto& u = tab_[t][idx[t]].useful;
          if (u > 0) --u;
        }
      }
    }
    hist_.push_back(taken);
    return pred;
  }

  const TageEntry& entry(std::uint32_t t, std::uint32_t i) const { return tab_[t][i]; }

 private:
  TageLiteConfig c_;
  std::vector<std::uint32_t> len_;
  std::uint32_t ib_;
  std::vector<std::vector<TageEntry>> tab_;
  std::vector<std::uint8_t> bim_;
  std::vector<bool> hist_;
};

// Branch stream with a few correlated and loop-like branches.
std::vector<std::pair<std::uint64_t, bool>> mixed_stream(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<std::uint64_t, bool>> out;
  bool last = false;
  std::uint32_t loop = 0;
  while (out.size() < n) {
    const bool a = rng.below(3) == 0;
    out.emplace_back(0x1000, a);
    loop = (loop + 1) % 7;
    for (std::uint32_t i = 0; i < loop; ++i) out.emplace_back(0x1040, true);
    out.emplace_back(0x1040, false);
    out.emplace_back(0x10a4 + 0x10 * rng.below(4), rng.coin());
    out.emplace_back(0x2000, a != last);
    last = a;
  }
  out.resize(n);
  return out;
}

TageLiteConfig small_tage() {
  TageLiteConfig c;
  c.num_tagged_tables = 4;
  c.table_entries = 64;
  c.tag_bits = 7;
  c.min_history = 2;
  c.max_history = 24;
  c.bimodal_entries = 64;
  return c;
}

}  // namespace

TEST(TageLite, DefaultHistoryLengthsAreGeometric) {
  EXPECT_EQ(TageLiteConfig{}.history_lengths(), (std::vector<std::uint32_t>{4, 8, 15, 28, 54, 104, 200}));
  TageLiteConfig tight;
  tight.num_tagged_tables = 5;
  tight.min_history = 1;
  tight.max_history = 5;
  EXPECT_EQ(tight.history_lengths(), (std::vector<std::uint32_t>{1, 2, 3, 4, 5}));
}

TEST(TageLite, ConfigValidation) {
  TageLiteConfig c;
  c.table_entries = 1000;
  EXPECT_THROW(TageLite{c}, ConfigError);
  c = TageLiteConfig{};
  c.max_history = 3;
  EXPECT_THROW(TageLite{c}, ConfigError);
  c = TageLiteConfig{};
  c.tag_bits = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TageLite, IncrementalFoldsMatchRecomputation) {
  const TageLiteConfig cfg = TageLiteConfig{};
  TageLite tage(cfg);
  OracleTage oracle(cfg);
  ASSERT_EQ(oracle.lengths(), tage.history_lengths());
  for (const auto& [ip, taken] : mixed_stream(3000, 5)) {
    for (std::uint32_t t = 0; t < cfg.num_tagged_tables; ++t) {
      ASSERT_EQ(tage.index_for(t, ip), oracle.index(t, ip));
      ASSERT_EQ(tage.tag_for(t, ip), oracle.tag(t, ip));
    }
    tage.predict(ip);
    tage.update(ip, taken);
    oracle.step(ip, taken);
  }
}

TEST(TageLite, MatchesOracleStepByStep) {
  for (const TageLiteConfig& cfg : {TageLiteConfig{}, small_tage()}) {
    TageLite tage(cfg);
    OracleTage oracle(cfg);
    std::size_t i = 0;
    for (const auto& [ip, taken] : mixed_stream(20000, 9)) {
      const TagePrediction p = tage.predict(ip);
      int prov = -2;
      const bool want = oracle.step(ip, taken, &prov);
      ASSERT_EQ(p.taken, want) << "record " << i;
      ASSERT_EQ(p.provider, prov) << "record " << i;
      tage.update(ip, taken);
      ++i;
    }
    for (std::uint32_t t = 0; t < cfg.num_tagged_tables; ++t) {
      for (std::uint32_t k = 0; k < cfg.table_entries; ++k) ASSERT_EQ(tage.entry(t, k), oracle.entry(t, k));
    }
  }
}

TEST(TageLite, GoldenPredictions) {
  // Frozen from OracleTage on the small configuration.
  const std::string golden = "00000010000011010001100100011100110101111011111010";
  TageLite tage(small_tage());
  OracleTage oracle(small_tage());
  std::string got, ref;
  for (const auto& [ip, taken] : mixed_stream(50, 3)) {
    got += tage.predict(ip).taken ? '1' : '0';
    tage.update(ip, taken);
    ref += oracle.step(ip, taken) ? '1' : '0';
  }
  EXPECT_EQ(ref, golden);
  EXPECT_EQ(got, golden);
}

TEST(TageLite, CountersSaturate) {
  TageLite tage(small_tage());
  for (int i = 0; i < 500; ++i) {
    const auto p = tage.predict(0x40);
    tage.update(0x40, true);
    if (p.provider >= 0) {
      EXPECT_LE(tage.entry(p.provider, p.indices[p.provider]).counter, tage.counter_max());
      EXPECT_LE(tage.entry(p.provider, p.indices[p.provider]).useful, tage.useful_max());
    }
  }
  EXPECT_EQ(tage.bimodal(tage.bimodal_index(0x40)), 3);
  EXPECT_TRUE(tage.predict(0x40).taken);
}

TEST(TageLite, UpdateRequiresMatchingPredict) {
  TageLite tage;
  EXPECT_THROW(tage.update(0x10, true), ContractError);
  tage.predict(0x10);
  EXPECT_THROW(tage.update(0x20, true), ContractError);
  tage.predict(0x10);
  EXPECT_NO_THROW(tage.update(0x10, true));
  EXPECT_THROW(tage.update(0x10, true), ContractError);
}

TEST(TageLite, PredictIsIdempotent) {
  TageLite tage(small_tage());
  for (const auto& [ip, taken] : mixed_stream(500, 4)) {
    const auto a = tage.predict(ip);
    const auto b = tage.predict(ip);
    ASSERT_EQ(a.taken, b.taken);
    ASSERT_EQ(a.provider, b.provider);
    tage.update(ip, taken);
  }
}

TEST(TageLite, LearnsShortPeriodicPattern) {
  TageLite tage;
  std::size_t wrong = 0;
  for (int i = 0; i < 4000; ++i) {
    const bool taken = (i % 3) != 0;
    if (tage.predict(0x400).taken != taken && i >= 2000) ++wrong;
    tage.update(0x400, taken);
  }
  EXPECT_EQ(wrong, 0u);
}

namespace {

// Reference perceptron written directly from the update rule.
struct OraclePerceptron {
  PerceptronConfig c;
  std::vector<std::vector<int>> w;
  std::deque<int> h;  // front = most recent

  explicit OraclePerceptron(const PerceptronConfig& cfg)
      : c(cfg), w(cfg.num_perceptrons, std::vector<int>(cfg.history_length + 1, 0)), h(cfg.history_length, -1) {}

  int sum(std::uint64_t ip) const {
    const auto& row = w[ip % c.num_perceptrons];
    int s = row[0];
    for (std::size_t i = 0; i < h.size(); ++i) s += row[i + 1] * h[i];
    return s;
  }
  void update(std::uint64_t ip, bool taken) {
    const int s = sum(ip);
    const int theta = static_cast<int>(std::floor(1.93 * c.history_length + 14));
    const int t = taken ? 1 : -1;
    if ((s >= 0) != taken || std::abs(s) <= theta) {
      auto& row = w[ip % c.num_perceptrons];
      const int hi = (1 << (c.weight_bits - 1)) - 1;
      row[0] = std::clamp(row[0] + t, -hi, hi);
      for (std::size_t i = 0; i < h.size(); ++i) row[i + 1] = std::clamp(row[i + 1] + t * h[i], -hi, hi);
    }
    h.push_front(t);
    h.pop_back();
  }
};

}  // namespace

TEST(Perceptron, ThetaAndWeightLimits) {
  PerceptronConfig c;
  EXPECT_EQ(c.theta(), 400);  // floor(1.93 * 200 + 14)
  EXPECT_EQ(c.weight_max(), 127);
  c.history_length = 12;
  EXPECT_EQ(c.theta(), 37);
  c.weight_bits = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Perceptron, MatchesOracle) {
  PerceptronConfig cfg;
  cfg.history_length = 24;
  cfg.num_perceptrons = 64;
  Perceptron p(cfg);
  OraclePerceptron o(cfg);
  std::size_t i = 0;
  for (const auto& [ip, taken] : mixed_stream(20000, 21)) {
    ASSERT_EQ(p.predict(ip).sum, o.sum(ip)) << "record " << i;
    p.update(ip, taken);
    o.update(ip, taken);
    ++i;
  }
}

TEST(Perceptron, WeightsSaturate) {
  PerceptronConfig cfg;
  cfg.history_length = 8;
  cfg.weight_bits = 3;
  cfg.num_perceptrons = 4;
  Perceptron p(cfg);
  // |sum| <= 9 * 3 < theta = 29, so every update trains.
  for (int i = 0; i < 200; ++i) p.update(0x3, true);
  EXPECT_EQ(p.weight(p.row(0x3), 0), 3);
  for (std::size_t k = 1; k <= 8; ++k) EXPECT_EQ(p.weight(p.row(0x3), k), 3);
  for (int i = 0; i < 400; ++i) p.update(0x3, false);
  EXPECT_EQ(p.weight(p.row(0x3), 0), -3);
  for (std::size_t k = 1; k <= 8; ++k) EXPECT_EQ(p.weight(p.row(0x3), k), 3);
}

TEST(Perceptron, PreStartHistoryReadsNotTaken) {
  Perceptron p;
  for (std::uint32_t a = 0; a < 200; ++a) EXPECT_EQ(p.history(a), -1);
  p.update(0x1, true);
  EXPECT_EQ(p.history(0), 1);
  EXPECT_EQ(p.history(1), -1);
}

TEST(Simulate, CountsPerIpAndCsv) {
  trace::Trace t;
  for (int i = 0; i < 100; ++i) t.records.push_back({0x10, true});
  for (int i = 0; i < 100; ++i) t.records.push_back({0x20, i % 2 == 0});
  Baseline b{TageLiteConfig{}};
  const StatsMap s = simulate_baseline(t, b);
  EXPECT_EQ(s.at(0x10).predictions, 100u);
  EXPECT_EQ(s.at(0x20).predictions, 100u);
  EXPECT_LE(s.at(0x10).mispredictions, 2u);
  EXPECT_EQ(total_predictions(s), 200u);
  EXPECT_EQ(total_mispredictions(s), s.at(0x10).mispredictions + s.at(0x20).mispredictions);
  std::ostringstream os;
  write_stats_csv(s, os);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "ip,predictions,mispredictions,accuracy");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("0x10,100,", 0), 0u);
}

TEST(Screen, RequiredMispredictionsScalesWithTraceLength) {
  H2pScreenConfig c;
  EXPECT_EQ(required_mispredictions(c, 30'000'000), 1000u);
  EXPECT_EQ(required_mispredictions(c, 6'000'000), 200u);
  EXPECT_EQ(required_mispredictions(c, 6'000'001), 201u);  // rounds up
  EXPECT_EQ(required_mispredictions(c, 1'000'000), 100u);  // floor
  EXPECT_THROW(required_mispredictions(c, std::nullopt), ConfigError);
  c.window_instructions = 0;
  EXPECT_EQ(required_mispredictions(c, std::nullopt), 1000u);
}

TEST(Screen, NeedsLowAccuracyAndVolume) {
  StatsMap s;
  s[0x1] = {10000, 500};   // 95%, 500 misp
  s[0x2] = {10000, 50};    // 99.5%
  s[0x3] = {200, 99};      // too few misp
  s[0x4] = {100000, 1000};  // exactly 99%: not below threshold
  s[0x5] = {1000, 100};    // exactly at floor
  H2pScreenConfig c;
  EXPECT_EQ(screen_h2ps(s, c, 1'000'000), (std::vector<std::uint64_t>{0x1, 0x5}));
  c.accuracy_threshold = 1.5;
  EXPECT_THROW(screen_h2ps(s, c, 1'000'000), ConfigError);
}

TEST(Screen, ListingTraceFlagsTheH2p) {
  trace::SynthConfig sc;
  sc.num_calls = 100000;
  const trace::Trace t = trace::generate_listing1_trace(sc);
  Baseline b{TageLiteConfig{}};
  const StatsMap stats = simulate_baseline(t, b);
  const auto flagged = screen_h2ps(stats, H2pScreenConfig{}, t.meta.instruction_count);
  std::set<std::uint64_t> allowed{trace::kIpDataDependent, trace::kIpLoop, trace::kIpH2p};
  for (std::uint32_t k = 0; k < sc.noise_per_iteration; ++k) allowed.insert(trace::noise_ip(k));
  EXPECT_NE(std::find(flagged.begin(), flagged.end(), trace::kIpH2p), flagged.end());
  // The data-dependent branch is random by construction and is flagged too.
  EXPECT_NE(std::find(flagged.begin(), flagged.end(), trace::kIpDataDependent), flagged.end());
  for (std::uint64_t ip : flagged) {
    EXPECT_TRUE(allowed.contains(ip)) << std::hex << ip;
    EXPECT_LT(stats.at(ip).accuracy(), 0.99);
  }
}
