#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "circus/daq/daq_manager.hpp"
#include "circus/error.hpp"
#include "circus/pipeline/optimizer.hpp"
#include "circus/pipeline/pipeline.hpp"
#include "circus/pipeline/stages.hpp"
#include "circus/pipeline/zip.hpp"
#include "support.hpp"

using namespace circus;
using namespace circus::pipeline;
namespace fs = std::filesystem;
using circus::testkit::TempDir;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::invalid_argument;
}

BronzeStore one_entry(const std::string& key, const std::string& detector, std::uint64_t acq, std::string bytes) {
  BronzeStore s;
  s.run_id = "r";
  s.entries[key] = {{detector, acq, "atom-json", ""}, std::move(bytes)};
  return s;
}

struct Brute {
  double sum = 0, mean = 0, std = 0;
};

/// Straight recomputation: every pixel normalised, summed row by row.
Brute brute_force(const Image& img, double gain, double bg) {
  Brute b;
  std::vector<double> norm;
  for (std::uint32_t y = 0; y < img.height; ++y) {
    for (std::uint32_t x = 0; x < img.width; ++x) norm.push_back((img.pixels[y * img.width + x] - bg) / gain);
  }
  for (double v : norm) b.sum += v;
  b.mean = b.sum / static_cast<double>(norm.size());
  double ss = 0;
  for (double v : norm) ss += (v - b.mean) * (v - b.mean);
  b.std = std::sqrt(ss / static_cast<double>(norm.size()));
  return b;
}

double brute_border_median(const Image& img, std::uint32_t m) {
  std::vector<double> v;
  for (std::uint32_t y = 0; y < img.height; ++y) {
    for (std::uint32_t x = 0; x < img.width; ++x) {
      if (x < m || y < m || x >= img.width - m || y >= img.height - m) v.push_back(img.pixels[y * img.width + x]);
    }
  }
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2] : (v[v.size() / 2 - 1] + v[v.size() / 2]) / 2;
}

/// Golden-section minimisation written independently of the library.
double golden_oracle(const std::function<double(double)>& f, double lo, double hi, int evals) {
  const double r = (std::sqrt(5.0) - 1) / 2;
  double c = hi - r * (hi - lo), d = lo + r * (hi - lo);
  double fc = f(c), fd = f(d);
  for (int i = 2; i < evals; ++i) {
    if (fc < fd) {
      hi = d, d = c, fd = fc;
      c = hi - r * (hi - lo), fc = f(c);
    } else {
      lo = c, c = d, fc = fd;
      d = lo + r * (hi - lo), fd = f(d);
    }
  }
  return fc < fd ? c : d;
}

}  // namespace

// ---- bronze ----------------------------------------------------------------

TEST(Bronze, ThreeFilesThreeEntriesWithIdenticalBytes) {
  TempDir tmp;
  const auto dir = tmp.path() / "runs" / "7";
  std::vector<std::string> bodies;
  for (int i = 1; i <= 3; ++i) {
    bodies.push_back(encode_atom({"cam", make_timestamp(i, 0), make_scalar(double(i))}));
    testkit::write_file(dir / daq::atom_file_name("cam", i), bodies.back());
  }
  const auto store = raw_to_bronze(dir);
  ASSERT_EQ(store.entries.size(), 3u);
  int i = 0;
  for (const auto& [key, e] : store.entries) {
    EXPECT_EQ(e.bytes, bodies[i]);
    EXPECT_EQ(e.meta.detector, "cam");
    EXPECT_EQ(e.meta.acquisition, static_cast<std::uint64_t>(++i));
  }
  EXPECT_EQ(deserialize_bronze(serialize_bronze(store)), store);
}

TEST(Bronze, EmptyRunGivesEmptyStoreAndMissingRunRaises) {
  TempDir tmp;
  fs::create_directories(tmp / "runs/empty");
  EXPECT_TRUE(raw_to_bronze(tmp / "runs/empty").entries.empty());
  EXPECT_EQ(code_of([&] { raw_to_bronze(tmp / "runs/none"); }), Errc::missing_run);
}

TEST(Bronze, ZipMembersBecomeEntriesWithContainerMetadata) {
  TempDir tmp;
  const auto dir = tmp / "runs/z";
  const auto a = encode_atom({"cam", make_timestamp(1, 0), make_scalar(1.0)});
  const auto b = std::string(5000, 'x');
  testkit::write_file(dir / "bundle.zip", write_zip({{"cam__000001.json", a}, {"notes.txt", b}}));
  const auto listing = read_zip(testkit::read_file(dir / "bundle.zip"));
  ASSERT_EQ(listing.size(), 2u);
  const auto store = raw_to_bronze(dir);
  ASSERT_EQ(store.entries.size(), 2u);
  for (const auto& m : listing) {
    const auto& e = store.entries.at("bundle.zip!" + m.name);
    EXPECT_EQ(e.meta.container, "bundle.zip");
    EXPECT_EQ(e.bytes, m.bytes);
  }
  EXPECT_EQ(store.entries.at("bundle.zip!notes.txt").meta.format, "unknown");
}

// ---- silver ----------------------------------------------------------------

TEST(Silver, WaveformDocumentSplitsIntoStartIncrementAndSamples) {
  const auto doc = encode_atom(testkit::waveform_atom("mcp", 0.0, 1e-9, {0.1, 0.2, 0.3, 0.4}, make_timestamp(1, 0)));
  const auto silver = bronze_to_silver(one_entry("mcp__000001.json", "mcp", 1, doc));
  const auto& leaf = silver.detectors.at("mcp").at(1);
  EXPECT_EQ(leaf.kind, LeafKind::waveform);
  EXPECT_EQ(leaf.waveform.t0, 0.0);
  EXPECT_EQ(leaf.waveform.dt, 1e-9);
  EXPECT_EQ(leaf.waveform.samples.size(), 4u);
  EXPECT_TRUE(silver.ledger.empty());
}

TEST(Silver, EmptyDocumentsAreLedgeredAsTooShort) {
  auto silver = bronze_to_silver(one_entry("a.json", "a", 1, ""));
  ASSERT_EQ(silver.ledger.size(), 1u);
  EXPECT_EQ(silver.ledger[0].reason, "too short");
  silver = bronze_to_silver(
      one_entry("b.json", "b", 1, encode_atom({"b", make_timestamp(1, 0), make_array(std::vector<double>{})})));
  ASSERT_EQ(silver.ledger.size(), 1u);
  EXPECT_EQ(silver.ledger[0].reason, "too short");
}

TEST(Silver, EveryBronzeEntryIsALeafConfigOrLedgerLine) {
  TempDir tmp;
  testkit::write_synthetic_run(tmp.path(), "5", 5);
  const auto dir = tmp / "runs/5";
  testkit::write_file(dir / "junk.bin", "\x01\x02");
  testkit::write_file(dir / "broken__000001.json", "[ {");
  const auto bronze = raw_to_bronze(dir);
  const auto silver = bronze_to_silver(bronze);
  std::size_t leaves = 0;
  for (const auto& [d, acqs] : silver.detectors) leaves += acqs.size();
  EXPECT_EQ(leaves + silver.configs.size() + silver.ledger.size(), bronze.entries.size());
  EXPECT_EQ(silver.ledger.size(), 2u);
  EXPECT_EQ(ledger_atom("5", silver.ledger).name, "pipeline/parse_failures");
}

TEST(Silver, SyntheticImageBecomesAnImageLeaf) {
  TempDir tmp;
  const auto truth = testkit::write_synthetic_run(tmp.path(), "1", 1, 2, 20, 10);
  const auto silver = bronze_to_silver(raw_to_bronze(tmp / "runs/1"));
  const auto& cams = silver.detectors.at("mcp/camera");
  ASSERT_EQ(cams.size(), 2u);
  EXPECT_EQ(cams.at(1).kind, LeafKind::image);
  EXPECT_EQ(cams.at(1).image, truth.images[0]);
  EXPECT_EQ(silver.configs.at("mcp/camera").gain, truth.gain);
}

// ---- gold ------------------------------------------------------------------

TEST(Gold, ConstantImage) {
  Image img{9, 7, std::vector<double>(63, 42.0)};
  const auto obs = image_observables(img, 4.0, 0.0);
  EXPECT_EQ(obs.at("mean"), 42.0 / 4.0);
  EXPECT_EQ(obs.at("std"), 0.0);
}

TEST(Gold, RandomImagesMatchBruteForceExactly) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto w = std::uniform_int_distribution<std::uint32_t>(17, 60)(rng);
    const auto h = std::uniform_int_distribution<std::uint32_t>(17, 60)(rng);
    Image img{w, h, std::vector<double>(static_cast<std::size_t>(w) * h)};
    for (auto& p : img.pixels) p = std::uniform_real_distribution<double>(0, 1000)(rng);
    const double gain = std::uniform_real_distribution<double>(0.5, 3)(rng);
    const double bg = brute_border_median(img, 8);
    EXPECT_EQ(border_median(img, 8), bg);
    const auto obs = image_observables(img, gain, bg);
    const auto b = brute_force(img, gain, bg);
    ASSERT_EQ(obs.at("sum"), b.sum);
    ASSERT_EQ(obs.at("mean"), b.mean);
    ASSERT_EQ(obs.at("std"), b.std);
  }
}

TEST(Gold, GaussianPulsePeakTimeWithinHalfASample) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const double dt = 1e-9;
    const double center = std::uniform_real_distribution<double>(100e-9, 900e-9)(rng);
    std::vector<double> s(1000);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::exp(-0.5 * std::pow((i * dt - center) / 15e-9, 2));
    const auto doc = encode_atom(testkit::waveform_atom("mcp", 0.0, dt, s, make_timestamp(1, 0)));
    const auto gold = silver_to_gold(bronze_to_silver(one_entry("mcp__000001.json", "mcp", 1, doc)));
    const auto& obs = gold.observables.at("mcp").at(1);
    EXPECT_NEAR(obs.at("peak_time"), center * 1e9, dt * 1e9 / 2 + 1e-9);
    EXPECT_LT(obs.at("pulse_time"), obs.at("peak_time"));
  }
}

TEST(Gold, PreservesSilverAndLedgersBadGain) {
  TempDir tmp;
  testkit::write_synthetic_run(tmp.path(), "3", 3);
  const auto silver = bronze_to_silver(raw_to_bronze(tmp / "runs/3"));
  const auto gold = silver_to_gold(silver);
  EXPECT_EQ(gold.silver, silver);
  EXPECT_EQ(gold_from_json(gold_to_json(gold)), gold);
  EXPECT_EQ(silver_from_json(silver_to_json(silver)), silver);

  auto zero = silver;
  zero.configs["mcp/camera"].gain = 0.0;
  const auto g2 = silver_to_gold(zero);
  EXPECT_EQ(g2.observables.count("mcp/camera"), 0u);
  EXPECT_EQ(g2.ledger.size(), gold.ledger.size() + 3u);
}

// ---- pipeline cache and datasets -------------------------------------------

TEST(Pipeline, CachedStagesAreReusedAndEqualScratch) {
  TempDir tmp;
  testkit::write_synthetic_run(tmp.path(), "1", 1);
  Pipeline p(tmp.path());
  const auto first = p.promote("1");
  const auto second = p.promote("1");
  EXPECT_EQ(first, second);
  EXPECT_EQ(p.stats().gold_built, 1u);
  EXPECT_EQ(p.stats().gold_cached, 1u);
  for (auto src : {Source::raw, Source::bronze, Source::silver, Source::gold}) EXPECT_EQ(p.gold_from("1", src), first);
}

TEST(Pipeline, ChangedRawFileInvalidatesTheCache) {
  TempDir tmp;
  testkit::write_synthetic_run(tmp.path(), "1", 1);
  Pipeline p(tmp.path());
  p.promote("1");
  testkit::write_file(tmp / "runs/1/extra__000001.json",
                      encode_atom({"extra", make_timestamp(9, 0), make_scalar(3.5)}));
  const auto g = p.promote("1");
  EXPECT_EQ(p.stats().gold_built, 2u);
  EXPECT_EQ(g.observables.at("extra").at(1).at("value"), 3.5);
}

TEST(Pipeline, DatasetShapesAndNulls) {
  TempDir tmp;
  for (int i = 10; i >= 1; --i) testkit::write_synthetic_run(tmp.path(), std::to_string(i), i, 1, 20, 20);
  testkit::write_file(tmp / "runs/4/temp__000001.json", encode_atom({"temp", make_timestamp(1, 0), make_scalar(21.5)}));
  Pipeline p(tmp.path());

  auto d = p.build_dataset({"mcp/camera.mean"}, {"3"});
  ASSERT_EQ(d.rows.size(), 1u);
  ASSERT_EQ(d.rows[0].values.size(), 1u);

  d = p.build_dataset({"mcp/camera.sum", "temp.value"}, {});
  ASSERT_EQ(d.rows.size(), 10u);
  for (std::size_t i = 0; i < d.rows.size(); ++i) {
    EXPECT_EQ(d.rows[i].run_id, std::to_string(i + 1));
    EXPECT_TRUE(d.rows[i].values[0].has_value());
    EXPECT_EQ(d.rows[i].values[1].has_value(), d.rows[i].run_id == "4");
  }
  const auto built = p.stats().gold_built;
  p.build_dataset({"mcp/camera.sum"}, {});
  EXPECT_EQ(p.stats().gold_built, built);

  EXPECT_EQ(code_of([&] { p.build_dataset({"mcp/camera.nothing"}, {}); }), Errc::unknown_observable);
  EXPECT_EQ(code_of([&] { p.build_dataset({"mcp/camera.sum"}, {"99"}); }), Errc::missing_run);

  const auto csv = tmp / "out.csv";
  write_dataset_csv(d, csv);
  const auto text = testkit::read_file(csv);
  EXPECT_EQ(text.substr(0, text.find('\n')), "run_id,started_at,mcp/camera.sum,temp.value");
  EXPECT_NE(text.find("null"), std::string::npos);
  EXPECT_EQ(dataset_manifest(d, csv)["rows"].size(), 10u);
}

TEST(Pipeline, LastObservable) {
  TempDir tmp;
  Pipeline empty(tmp.path());
  EXPECT_EQ(code_of([&] { empty.last_observable("temp.value"); }), Errc::no_data);
  testkit::write_file(tmp / "runs/1/temp__000001.json", encode_atom({"temp", make_timestamp(1, 0), make_scalar(1.0)}));
  Pipeline p(tmp.path());
  EXPECT_EQ(p.last_observable("temp.value").data.as_double(), 1.0);
  testkit::write_file(tmp / "runs/2/temp__000001.json", encode_atom({"temp", make_timestamp(2, 0), make_scalar(2.0)}));
  EXPECT_EQ(p.last_observable("temp.value").data.as_double(), 2.0);
}

TEST(Pipeline, RunIdOrdering) {
  EXPECT_TRUE(run_id_less("2", "10"));
  EXPECT_TRUE(run_id_less("000099", "100"));
  EXPECT_TRUE(run_id_less("5", "alpha"));
  EXPECT_FALSE(run_id_less("beta", "alpha"));
}

// ---- optimizer -------------------------------------------------------------

TEST(Optimizer, EmptyHistoryProposesTheCenter) {
  FeedbackSpec spec{"x.value", {}, OptimizerKind::automatic, {{"a", -2, 6, {}}, {"b", 0, 1, {}}}};
  const auto p = propose_parameters(spec, {});
  EXPECT_EQ(p.at("a"), 2.0);
  EXPECT_EQ(p.at("b"), 0.5);
}

TEST(Optimizer, ZeroBudgetIsExhausted) {
  FeedbackSpec spec{"x.value", {}, OptimizerKind::automatic, {{"a", 0, 1, {}}}, 0};
  EXPECT_EQ(code_of([&] { propose_parameters(spec, {}); }), Errc::optimizer_exhausted);
}

TEST(Optimizer, TargetOnMonotoneResponseConvergesWithinBudget) {
  const auto response = [](double x) { return 3.0 * x + 1.0; };
  FeedbackSpec spec{"det.obs", {Objective::Kind::target, 10.0}, OptimizerKind::automatic, {{"x", 0, 10, {}}}, 20, 0.01};
  std::vector<HistoryEntry> h;
  while (!converged(spec, h)) {
    const auto p = propose_parameters(spec, h);
    h.push_back({p, response(p.at("x"))});
    ASSERT_LE(h.size(), 20u);
  }
  EXPECT_LE(std::abs(h[*best_entry(spec, h)].observable - 10.0), 0.01);
  const double x_oracle = golden_oracle([&](double x) { return std::abs(response(x) - 10.0); }, 0, 10, 19);
  EXPECT_NEAR(x_oracle, 3.0, 0.01);
}

TEST(Optimizer, QuadraticTargetBestCostNeverIncreases) {
  const auto response = [](double x) { return (x - 1.3) * (x - 1.3); };
  FeedbackSpec spec{"det.obs", {Objective::Kind::target, 0.0}, OptimizerKind::golden_section, {{"x", -4, 6, {}}}, 20};
  std::vector<HistoryEntry> h;
  double best = INFINITY;
  for (int i = 0; i < 20; ++i) {
    const auto p = propose_parameters(spec, h);
    h.push_back({p, response(p.at("x"))});
    const double c = cost(spec.objective, h.back().observable);
    best = std::min(best, c);
    EXPECT_EQ(cost(spec.objective, h[*best_entry(spec, h)].observable), best);
  }
  EXPECT_LT(best, 1e-5);
  EXPECT_EQ(code_of([&] { propose_parameters(spec, h); }), Errc::optimizer_exhausted);
}

TEST(Optimizer, CoordinateSearchOnTwoParametersRespectsTheGrid) {
  const auto response = [](const ParamSet& p) {
    return std::pow(p.at("a") - 2.5, 2) + 2 * std::pow(p.at("b") + 1.0, 2);
  };
  FeedbackSpec spec{"det.obs", {Objective::Kind::minimize}, OptimizerKind::automatic,
                    {{"a", 0, 10, 0.5}, {"b", -5, 5, 0.5}}, 40};
  std::vector<HistoryEntry> h;
  for (int i = 0; i < 40; ++i) {
    const auto p = propose_parameters(spec, h);
    for (const auto& r : spec.params) {
      const double k = (p.at(r.name) - r.lo) / *r.step;
      ASSERT_NEAR(k, std::round(k), 1e-9);
      ASSERT_GE(p.at(r.name), r.lo);
      ASSERT_LE(p.at(r.name), r.hi);
    }
    h.push_back({p, response(p)});
  }
  const auto& best = h[*best_entry(spec, h)].params;
  EXPECT_EQ(best.at("a"), 2.5);
  EXPECT_EQ(best.at("b"), -1.0);
}

TEST(Optimizer, SpecJsonRoundTripAndValidation) {
  FeedbackSpec spec{"det.obs", {Objective::Kind::target, 4}, OptimizerKind::coordinate, {{"a", 0, 1, 0.1}}, 9, 0.5};
  const auto back = feedback_from_json(feedback_to_json(spec));
  EXPECT_EQ(feedback_to_json(back), feedback_to_json(spec));
  EXPECT_EQ(code_of([] { feedback_from_json({{"observable", 3}}); }), Errc::schema_violation);
  FeedbackSpec bad{"det.obs", {}, OptimizerKind::golden_section, {{"a", 0, 1, {}}, {"b", 0, 1, {}}}};
  EXPECT_EQ(code_of([&] { bad.validate(); }), Errc::invalid_argument);
}
