// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "etiobench/diagstats.hpp"
#include "etiobench/pipeline.hpp"
#include "etiobench/studysvc.hpp"
#include "support/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace etio;
using namespace etio::nn;

namespace {

int failures = 0;

void verdict(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("%s [%d] %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

IchNetConfig tiny_config() {
  IchNetConfig c;
  c.input_dims = {8, 8, 4};
  c.slow_stride = 2;
  c.fast_widths = {2, 2, 4};
  c.embedding_dim = 8;
  c.seed = 11;
  return c;
}

Tensor pooled_ce(const Tensor& x, std::uint64_t seed) {
  const Tensor pooled = global_avg_pool(x);
  const Tensor w = random_tensor({kClassCount, pooled.dim(0)}, seed, -1, 1, false);
  const Tensor b = random_tensor({kClassCount}, seed + 1, -1, 1, false);
  return weighted_ce_loss(softmax(linear(pooled, w, b)), Etiology::avm, {0.5, 1.0, 1.5, 2.0, 2.5, 3.0});
}

void hanley_mcneil() {
  const auto a = diagstats::hanley_mcneil_ci(0.986, 70, 130);
  const auto b = diagstats::hanley_mcneil_ci(0.952, 75, 125);
  const bool ok = near(a.lower, 0.967, 0.001) && near(a.upper, 1.000, 0.001) && near(b.lower, 0.917, 0.001) &&
                  near(b.upper, 0.987, 0.001);
  verdict(1, "Hanley-McNeil CI", ok,
          fmt("(0.986,70,130)->(%.4f,%.4f) (0.952,75,125)->(%.4f,%.4f)", a.lower, a.upper, b.lower, b.upper));
}

void clopper_pearson() {
  const auto ci = diagstats::clopper_pearson(68, 70);
  bool edges = true;
  for (int n : {1, 10, 50, 200}) edges = edges && diagstats::clopper_pearson(0, n).lower == 0.0 &&
                                          diagstats::clopper_pearson(n, n).upper == 1.0;
  std::vector<diagstats::Interval> table;
  for (int k = 0; k <= 50; ++k) table.push_back(diagstats::clopper_pearson(k, 50));
  std::mt19937_64 rng(7);
  std::binomial_distribution<int> draw(50, 0.3);
  int covered = 0;
  for (int t = 0; t < 10000; ++t) {
    const auto& c = table[draw(rng)];
    covered += c.lower <= 0.3 && 0.3 <= c.upper;
  }
  const double coverage = covered / 10000.0;
  const bool ok = near(ci.lower, 0.901, 0.001) && near(ci.upper, 0.997, 0.001) && edges && coverage >= 0.94;
  verdict(2, "Clopper-Pearson CI", ok,
          fmt("(68,70)->(%.4f,%.4f) edges %s coverage(n=50,p=0.3) %.4f", ci.lower, ci.upper, edges ? "ok" : "bad",
              coverage));
}

// Leaves the last seed's run in root for the reader-study check.
void end_to_end(const fs::path& root) {
  const pipeline::DeskProfile profile;
  int good = 0;
  double total = 0.0;
  std::string seeds;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    fs::remove_all(root);
    const auto run = pipeline::run_desk_experiment(seed, 300, 60, profile, root);
    const bool ok = run.accuracy >= 0.5 && run.auc[0] >= 0.7 && run.auc[1] >= 0.7;
    good += ok;
    total += run.seconds;
    std::fprintf(stderr, "  e2e seed %llu: accuracy %.3f auc aneurysm %.3f hypertensive %.3f (%.0f s)%s\n",
                 static_cast<unsigned long long>(seed), run.accuracy, run.auc[0], run.auc[1], run.seconds,
                 ok ? "" : " below threshold");
    seeds += fmt(" %.2f/%.2f/%.2f", run.accuracy, run.auc[0], run.auc[1]);
  }
  verdict(3, "end-to-end desk run", good >= 8 && total <= 900.0,
          fmt("%d/10 seeds meet acc>=0.5, AUC>=0.7 (aneurysm, hypertensive); %.0f s total (target 900);", good,
              total) +
              " acc/auc_an/auc_hy:" + seeds);
}

void gradients() {
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, testing::GradCheckResult>> results;
  auto check = [&](const std::string& name, const std::vector<std::pair<std::string, Tensor>>& params,
                   const std::function<Tensor()>& f) { results.emplace_back(name, testing::grad_check(params, f)); };
  {
    const Tensor x = random_tensor({2, 4, 5, 5}, 1), w = random_tensor({3, 2, 3, 3, 3}, 2), b = random_tensor({3}, 3);
    check("conv3d", {{"x", x}, {"w", w}, {"b", b}}, [&] { return pooled_ce(conv3d(x, w, b, {1, 2, 2}, {1, 1, 1}), 10); });
  }
  {
    const Tensor x = random_tensor({2, 4, 3, 3}, 4), w = random_tensor({4, 2, 2, 1, 1}, 5), b = random_tensor({4}, 6);
    check("lateral conv", {{"x", x}, {"w", w}, {"b", b}},
          [&] { return pooled_ce(conv3d(x, w, b, {2, 1, 1}, {0, 0, 0}), 11); });
  }
  {
    const Tensor x = random_tensor({3, 2, 3, 3}, 7);
    check("relu", {{"x", x}}, [&] { return pooled_ce(relu(x), 12); });
  }
  {
    const Tensor x = random_tensor({4, 2, 2, 3}, 8);
    check("global pool", {{"x", x}}, [&] { return pooled_ce(x, 13); });
  }
  {
    const Tensor fast = random_tensor({2, 4, 3, 3}, 9), slow = random_tensor({3, 2, 3, 3}, 10);
    check("fusion", {{"fast", fast}, {"slow", slow}},
          [&] { return pooled_ce(concat(slow, take_slices(fast, 1, 2)), 14); });
  }
  {
    const Tensor x = random_tensor({5}, 11), w = random_tensor({6, 5}, 12), b = random_tensor({6}, 13);
    check("linear", {{"x", x}, {"w", w}, {"b", b}},
          [&] { return weighted_ce_loss(softmax(linear(x, w, b)), Etiology::cm, {1, 1, 1, 1, 1, 1}); });
  }
  {
    const Tensor z = random_tensor({6}, 14, -3, 3);
    check("softmax+weighted CE", {{"z", z}},
          [&] { return weighted_ce_loss(softmax(z), Etiology::others, {1, 2, 3, 4, 5, 6}); });
  }
  {
    const Tensor a = random_tensor({4}, 15), p = random_tensor({4}, 16), n = random_tensor({4}, 17);
    check("triplet", {{"a", a}, {"p", p}, {"n", n}}, [&] { return triplet_loss(a, p, n, 1.0); });
  }
  {
    const IchNetConfig c = tiny_config();
    IchNet m(c);
    std::vector<Tensor> inputs;
    for (std::uint64_t s = 0; s < 3; ++s) inputs.push_back(random_tensor({1, 4, 8, 8}, 40 + s, 0, 1, false));
    const std::vector<Etiology> labels{Etiology::aneurysm, Etiology::aneurysm, Etiology::cm};
    const std::vector<Triplet> triplets{{0, 1, 2}, {1, 0, 2}};
    const ClassVector w{0.4, 0.5, 3.0, 7.1, 9.2, 1.5};
    check("tiny model, total loss", m.parameters(), [&] {
      const auto outs = m.forward(inputs);
      std::vector<LossItem> items;
      for (int i = 0; i < 3; ++i) items.push_back({outs[i].probs, outs[i].embedding, labels[i]});
      return total_loss(items, triplets, w, c).total;
    });
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bool ok = seconds < 120.0;
  std::string detail;
  for (const auto& [name, r] : results) {
    ok = ok && r.failed == 0 && r.checked > 0;
    detail += fmt("%s %zu/%zu ok (worst %.1e); ", name.c_str(), r.checked - r.failed, r.checked, r.worst);
  }
  verdict(4, "finite-difference gradients", ok, detail + fmt("%.1f s", seconds));
}

void counts() {
  voxvol::Volume v({12, 10, 3}, {1, 1, 1}, 30);
  const bool rotations = voxvol::augment_rotations(v).size() == 18;
  const bool total = datapipe::augmented_training_size(1868) == 33624;
  std::vector<datapipe::LabeledId> ids;
  for (int c = 0; c < kClassCount; ++c)
    for (std::int64_t i = 0; i < kDevelopmentCohortCounts[c]; ++i)
      ids.push_back({std::to_string(c) + "_" + std::to_string(i), etiology_from_index(c)});
  const auto expanded = datapipe::oversample(ids);
  ClassCounts seen{};
  for (const auto& id : expanded) ++seen[id[0] - '0'];
  bool exact = true;
  for (int c = 0; c < kClassCount; ++c)
    exact = exact && seen[c] == datapipe::kOversampleFactors[c] * kDevelopmentCohortCounts[c];
  verdict(5, "pipeline counts", rotations && total && exact,
          fmt("18 rotations %s, 18*1868=%lld, oversampled (%lld,%lld,%lld,%lld,%lld,%lld) of %zu", rotations ? "yes" : "no",
              static_cast<long long>(datapipe::augmented_training_size(1868)), static_cast<long long>(seen[0]),
              static_cast<long long>(seen[1]), static_cast<long long>(seen[2]), static_cast<long long>(seen[3]),
              static_cast<long long>(seen[4]), static_cast<long long>(seen[5]), expanded.size()));
}

void statistics() {
  std::mt19937_64 rng(3);
  int auc_ok = 0;
  for (int t = 0; t < 500; ++t) {
    const int np = std::uniform_int_distribution<int>(1, 30)(rng), nn = std::uniform_int_distribution<int>(1, 30)(rng);
    auto draw = [&] { return std::uniform_int_distribution<int>(0, 9)(rng) / 9.0; };
    std::vector<double> pos(np), neg(nn);
    for (auto& x : pos) x = draw();
    for (auto& x : neg) x = draw();
    double pairs = 0;
    for (double p : pos)
      for (double n : neg) pairs += p > n ? 1.0 : p == n ? 0.5 : 0.0;
    auc_ok += near(diagstats::auc(pos, neg), pairs / (np * static_cast<double>(nn)), 1e-12);
  }

  double worst_kappa = 0.0;
  for (int t = 0; t < 200; ++t) {
    const int n = std::uniform_int_distribution<int>(5, 40)(rng), m = 2 + t % 4;
    std::vector<std::vector<Etiology>> raters(m, std::vector<Etiology>(n));
    for (auto& r : raters)
      for (auto& x : r) x = etiology_from_index(std::uniform_int_distribution<int>(0, 3)(rng));
    // Cohen: chance agreement over all cross pairs of labels.
    double po = 0, pe = 0;
    for (int i = 0; i < n; ++i) {
      po += raters[0][i] == raters[1][i];
      for (int j = 0; j < n; ++j) pe += raters[0][i] == raters[1][j];
    }
    po /= n;
    pe /= static_cast<double>(n) * n;
    if (pe < 1.0) worst_kappa = std::max(worst_kappa, std::abs(diagstats::cohen_kappa(raters[0], raters[1]) - (po - pe) / (1 - pe)));
    // Fleiss: ordered rater pairs within each case, ordered label pairs overall.
    double pbar = 0, pe2 = 0;
    std::vector<ClassCounts> rows(n, ClassCounts{});
    std::vector<Etiology> all;
    for (int i = 0; i < n; ++i) {
      double agree = 0;
      for (int a = 0; a < m; ++a) {
        ++rows[i][index_of(raters[a][i])];
        all.push_back(raters[a][i]);
        for (int b = 0; b < m; ++b) agree += a != b && raters[a][i] == raters[b][i];
      }
      pbar += agree / (m * (m - 1.0)) / n;
    }
    for (auto x : all)
      for (auto y : all) pe2 += x == y;
    pe2 /= static_cast<double>(all.size()) * all.size();
    if (pe2 < 1.0) worst_kappa = std::max(worst_kappa, std::abs(diagstats::fleiss_kappa(rows) - (pbar - pe2) / (1 - pe2)));
  }

  const auto member = make_checkpoint(IchNet(tiny_config()), 0, 11);
  const inference::Ensemble one({member});
  const inference::Ensemble five(std::vector<ModelCheckpoint>(5, member));
  voxvol::Volume v({8, 8, 4}, {1, 1, 1});
  std::mt19937_64 vr(5);
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) v.at(x, y, z) = static_cast<std::int16_t>(std::uniform_int_distribution<int>(0, 90)(vr));
  bool exact = true;
  for (int r : {1, 18}) {
    const auto a = one.predict(v, r), b = five.predict(v, r);
    exact = exact && std::memcmp(a.data(), b.data(), sizeof a) == 0;
  }
  verdict(6, "statistics oracles", auc_ok == 500 && worst_kappa < 1e-9 && exact,
          fmt("auc %d/500 match pair counting; worst kappa deviation %.2e; identical-member ensemble bit-exact %s", auc_ok,
              worst_kappa, exact ? "yes" : "no"));
}

nlohmann::ordered_json study_report(const fs::path& run_dir, double adoption, std::uint64_t seed) {
  const auto manifest = datapipe::read_manifest(run_dir / "prep_test" / "manifest.jsonl");
  std::map<std::string, ClassVector> preds;
  for (const auto& row : inference::read_predictions_csv(run_dir / "predictions.csv").rows) preds[row.case_id] = *row.probs;
  studysvc::StudyService service;
  service.register_dataset("held_out", manifest, preds);
  std::vector<studysvc::RaterProfile> profiles;
  for (int i = 1; i <= 6; ++i) profiles.push_back({"rater" + std::to_string(i), 0.55 + 0.04 * i, adoption});
  const auto sim = studysvc::simulate_raters(manifest, preds, profiles, seed);
  for (const auto& [mode, raters] : sim)
    for (const auto& [rater, responses] : raters) {
      std::map<std::string, Etiology> answer;
      for (const auto& r : responses) answer[r.case_id] = r.label;
      const auto s = service.create_session(rater, mode, "held_out", seed);
      for (const auto& id : s.case_order) service.submit_response(s.session_id, id, std::string(to_token(answer[id])), 0);
      service.finalize(s.session_id);
    }
  return service.report("held_out", 500, seed);
}

pipeline::DeskProfile small_profile() {
  pipeline::DeskProfile p;
  p.epochs = 1;
  return p;
}

void determinism(const fs::path& a, const fs::path& b) {
  for (const auto& dir : {a, b}) {
    fs::remove_all(dir);
    pipeline::run_desk_experiment(42, 120, 24, small_profile(), dir);
    std::ofstream(dir / "study_report.json") << study_report(dir, 0.5, 9).dump(2);
  }
  std::vector<std::string> compared, differing;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    const auto ext = rel.extension();
    if (ext != ".ichc" && ext != ".csv" && ext != ".json") continue;
    compared.push_back(rel.string());
    if (slurp(e.path()) != slurp(b / rel)) differing.push_back(rel.string());
  }
  const bool has_all = std::count_if(compared.begin(), compared.end(), [](const auto& s) { return s.ends_with(".ichc"); }) == 5;
  std::string detail = fmt("%zu checkpoint/CSV/report files compared, %zu differ", compared.size(), differing.size());
  for (const auto& d : differing) detail += " " + d;
  verdict(7, "fixed-seed determinism", has_all && differing.empty(), detail);
}

void reader_study(const fs::path& run_dir) {
  const auto full = study_report(run_dir, 1.0, 5);
  const auto& ai = full["tasks"]["images_clinical_ai"];
  const bool accuracy = ai["pooled_accuracy"]["value"] == full["model"]["accuracy"]["value"];
  bool kappa = ai["cohen_kappa"].size() == 6;
  for (const auto& row : ai["cohen_kappa"])
    for (const auto& k : row) kappa = kappa && k == 1.0;
  bool sensitivity = true;
  for (const auto& [cls, v] : ai["per_etiology"].items())
    sensitivity = sensitivity && v["sensitivity"]["mean"] == full["model"]["per_etiology"][cls]["sensitivity"]["value"];

  const auto none = study_report(run_dir, 0.0, 5);
  const bool same = none["tasks"]["images_clinical_ai"] == none["tasks"]["images_clinical"];
  verdict(8, "simulated reader study", accuracy && kappa && sensitivity && same,
          fmt("adoption 1: pooled accuracy %.4f vs model %.4f, all pairwise kappa 1 %s, sensitivities equal %s; "
              "adoption 0: mode-3 report equals mode-2 %s",
              ai["pooled_accuracy"]["value"].get<double>(), full["model"]["accuracy"]["value"].get<double>(),
              kappa ? "yes" : "no", sensitivity ? "yes" : "no", same ? "yes" : "no"));
}

}  // namespace

int main() {
  const auto root = fs::temp_directory_path() / "etio_acceptance";
  hanley_mcneil();
  clopper_pearson();
  end_to_end(root / "e2e");
  gradients();
  counts();
  statistics();
  determinism(root / "a", root / "b");
  reader_study(root / "e2e");
  fs::remove_all(root);
  return failures == 0 ? 0 : 1;
}
