#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "etiobench/pipeline.hpp"
#include "etiobench/seeding.hpp"
#include "etiobench/studysvc.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace etio;

namespace {

struct Run {
  std::string subcommand;
  fs::path out;
  ordered_json config = ordered_json::object();
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& p, const ordered_json& j) { std::ofstream(p, std::ios::binary) << j.dump(2) << '\n'; }

// Resolved config next to the outputs, then an index of every file under --out.
void finish(const Run& run) {
  ordered_json cfg;
  cfg["subcommand"] = run.subcommand;
  cfg.update(run.config);
  write_json(run.out / "run_config.json", cfg);

  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(run.out))
    if (e.is_regular_file() && e.path().filename() != "artifacts.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  ordered_json list = ordered_json::array();
  for (const auto& f : files) {
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(slurp(f))));
    list.push_back({{"path", fs::relative(f, run.out).generic_string()}, {"bytes", fs::file_size(f)}, {"fnv1a", hash}});
  }
  write_json(run.out / "artifacts.json", {{"subcommand", run.subcommand}, {"files", list}});
}

ClassVector parse_proportions(const std::string& text) {
  if (text == "development") return development_cohort_proportions();
  if (text == "uniform") return {1 / 6.0, 1 / 6.0, 1 / 6.0, 1 / 6.0, 1 / 6.0, 1 / 6.0};
  ClassVector p{};
  std::stringstream ss(text);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == kClassCount) break;
    p[i++] = std::stod(item);
  }
  if (i != kClassCount || std::getline(ss, item))
    throw std::invalid_argument("--proportions takes 'development', 'uniform' or six comma-separated values");
  return p;
}

std::map<std::string, ClassVector> probabilities_of(const fs::path& csv) {
  std::map<std::string, ClassVector> out;
  for (const auto& row : inference::read_predictions_csv(csv).rows)
    if (row.ok()) out[row.case_id] = *row.probs;
  return out;
}

ordered_json triple(const std::vector<double>& v) { return ordered_json(v); }

void add_triple(CLI::App* app, const std::string& name, std::vector<double>& target, const std::string& help) {
  app->add_option(name, target, help)->delimiter(',')->expected(3)->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CT hemorrhage etiology pipeline: phantoms, preprocessing, training, inference, statistics, reader study"};
  app.require_subcommand(1);
  app.fallthrough();
  Run run;
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();

  pipeline::DeskProfile desk;

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a phantom cohort");
  std::int64_t gen_n = 300;
  std::string proportions = "development";
  std::vector<double> gen_dims{64, 64, 16}, gen_spacing{2.4, 2.4, 8.4};
  double noise = desk.phantoms.noise_hu;
  gen->add_option("--n", gen_n, "Number of cases")->capture_default_str();
  gen->add_option("--proportions", proportions, "'development', 'uniform' or six comma-separated values")
      ->capture_default_str();
  add_triple(gen, "--dims", gen_dims, "Volume size nx,ny,nz");
  add_triple(gen, "--spacing", gen_spacing, "Voxel spacing in mm");
  gen->add_option("--noise", noise, "Gaussian noise sigma in HU")->capture_default_str();
  gen->add_option("--out", run.out, "Output directory")->required();

  // prep
  auto* prep = app.add_subcommand("prep", "Resample, skull-strip and crop every volume");
  fs::path manifest_path;
  std::vector<double> target_spacing{4.8, 4.8, 16.8}, crop{32, 32, 8};
  bool no_strip = false;
  prep->add_option("--manifest", manifest_path, "Input manifest.jsonl")->required()->check(CLI::ExistingFile);
  add_triple(prep, "--target-spacing", target_spacing, "Target voxel spacing in mm");
  add_triple(prep, "--crop", crop, "Output size nx,ny,nz");
  prep->add_flag("--no-strip", no_strip, "Skip skull stripping");
  prep->add_option("--out", run.out, "Output directory")->required();

  // split
  auto* split = app.add_subcommand("split", "Stratified k-fold assignment");
  int k = desk.folds;
  split->add_option("--manifest", manifest_path, "Manifest to split")->required()->check(CLI::ExistingFile);
  split->add_option("--k", k, "Fold count")->capture_default_str()->check(CLI::Range(2, 100));
  split->add_option("--out", run.out, "Output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train one model per fold");
  fs::path folds_path;
  int epochs = desk.epochs, batch = 8, only_fold = -1;
  double lr = desk.learning_rate;
  train->add_option("--manifest", manifest_path, "Preprocessed manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--folds", folds_path, "folds.json from split")->required()->check(CLI::ExistingFile);
  train->add_option("--epochs", epochs)->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--lr", lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--batch", batch)->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--fold", only_fold, "Train only this fold");
  train->add_option("--out", run.out, "Output directory")->required();

  // predict
  auto* predict = app.add_subcommand("predict", "Ensemble prediction over a manifest");
  fs::path models_dir;
  int rotations = desk.rotations;
  predict->add_option("--manifest", manifest_path, "Preprocessed manifest")->required()->check(CLI::ExistingFile);
  predict->add_option("--models", models_dir, "Directory of *.ichc checkpoints")->required()->check(CLI::ExistingDirectory);
  predict->add_option("--rotations", rotations, "1 or 18")->capture_default_str()->check(CLI::IsMember({1, 18}));
  predict->add_option("--out", run.out, "Output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Model metrics from a predictions CSV");
  fs::path predictions_path;
  eval->add_option("--manifest", manifest_path, "Manifest with ground truth")->required()->check(CLI::ExistingFile);
  eval->add_option("--predictions", predictions_path, "predictions.csv")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", run.out, "Output directory")->required();

  // study-serve
  auto* serve = app.add_subcommand("study-serve", "Serve the reader-study HTTP API");
  std::string dataset_id = "study", host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--manifest", manifest_path, "Study dataset manifest")->required()->check(CLI::ExistingFile);
  serve->add_option("--predictions", predictions_path, "Model predictions (enables images_clinical_ai)")
      ->check(CLI::ExistingFile);
  serve->add_option("--dataset-id", dataset_id)->capture_default_str();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str()->check(CLI::Range(1, 65535));
  serve->add_option("--out", run.out, "Session log directory")->required();

  // study-sim
  auto* sim = app.add_subcommand("study-sim", "Write simulated rater responses");
  std::vector<std::string> profiles{"rater1:0.70:0.5", "rater2:0.72:0.5", "rater3:0.64:0.5",
                                    "rater4:0.76:0.5", "rater5:0.64:0.5", "rater6:0.70:0.5"};
  sim->add_option("--manifest", manifest_path, "Study dataset manifest")->required()->check(CLI::ExistingFile);
  sim->add_option("--predictions", predictions_path, "Model predictions for the AI-assisted task")
      ->check(CLI::ExistingFile);
  sim->add_option("--rater", profiles, "id:accuracy:adoption, repeatable")->capture_default_str();
  sim->add_option("--out", run.out, "Output directory")->required();

  // report
  auto* report = app.add_subcommand("report", "Reader-study report from response files");
  std::vector<fs::path> response_files;
  int replicates = diagstats::kDefaultBootstrapReplicates;
  report->add_option("--manifest", manifest_path, "Study dataset manifest")->required()->check(CLI::ExistingFile);
  report->add_option("--responses", response_files, "Response .jsonl files or directories")
      ->required()
      ->check(CLI::ExistingPath);
  report->add_option("--predictions", predictions_path, "Model predictions")->check(CLI::ExistingFile);
  report->add_option("--replicates", replicates, "Bootstrap replicates")->capture_default_str()->check(
      CLI::Range(100, 1000000));
  report->add_option("--out", run.out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    run.subcommand = app.get_subcommands().front()->get_name();
    fs::create_directories(run.out);
    run.config["seed"] = seed;
    auto to_dims = [](const std::vector<double>& v) {
      for (double x : v)
        if (x < 1 || x != static_cast<int>(x)) throw std::invalid_argument("sizes must be positive integers");
      return voxvol::Dims{static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2])};
    };

    if (*gen) {
      const auto props = parse_proportions(proportions);
      const phantomgen::CohortOptions opts{to_dims(gen_dims), {gen_spacing[0], gen_spacing[1], gen_spacing[2]}, noise};
      const auto m = phantomgen::generate_cohort(gen_n, props, seed, run.out, opts);
      run.config.update({{"n", gen_n}, {"proportions", props}, {"dims", triple(gen_dims)},
                         {"spacing", triple(gen_spacing)}, {"noise_hu", noise}});
      std::cout << "generated " << m.cases.size() << " cases in " << run.out << '\n';
    } else if (*prep) {
      voxvol::PrepParams p{{target_spacing[0], target_spacing[1], target_spacing[2]}, to_dims(crop), !no_strip};
      const auto m = pipeline::prep_dataset(datapipe::read_manifest(manifest_path), p, run.out);
      run.config.update({{"manifest", fs::absolute(manifest_path)}, {"target_spacing", triple(target_spacing)},
                         {"crop", triple(crop)}, {"skull_strip", !no_strip}});
      std::cout << "preprocessed " << m.cases.size() << " volumes\n";
    } else if (*split) {
      const auto folds = datapipe::stratified_kfold(datapipe::read_manifest(manifest_path), k, seed);
      datapipe::write_folds(folds, run.out / "folds.json");
      run.config.update({{"manifest", fs::absolute(manifest_path)}, {"k", k}});
    } else if (*train) {
      const auto m = datapipe::read_manifest(manifest_path);
      const auto folds = datapipe::read_folds(folds_path);
      if (m.cases.empty()) throw std::invalid_argument("manifest has no cases");
      auto config = desk.model_config(seed);
      config.input_dims = voxvol::read_volume(m.resolve(m.cases.front())).dims();
      config.epochs = epochs;
      config.learning_rate = lr;
      config.batch_size = batch;
      config.validate();
      nn::TrainOptions opts;
      opts.on_epoch = [](const nn::EpochLog& e) {
        std::printf("epoch %d train %.4f val %.4f\n", e.epoch, e.train_loss, e.validation_loss);
        std::fflush(stdout);
      };
      if (only_fold >= 0) {
        const auto r = nn::train_fold(m, folds, only_fold, config, opts);
        nn::write_checkpoint(r.checkpoint, run.out / pipeline::checkpoint_name(only_fold));
        std::ofstream(run.out / ("fold_" + std::to_string(only_fold) + "_log.json")) << nn::training_log_json(r.log)
                                                                                      << '\n';
      } else {
        pipeline::train_folds(m, folds, config, run.out, opts);
      }
      run.config.update({{"manifest", fs::absolute(manifest_path)},
                         {"folds", fs::absolute(folds_path)},
                         {"fold", only_fold < 0 ? ordered_json("all") : ordered_json(only_fold)},
                         {"model", nlohmann::ordered_json::parse(nn::config_to_json(config).dump())}});
    } else if (*predict) {
      const inference::Ensemble ensemble(inference::load_checkpoints(models_dir));
      const auto m = datapipe::read_manifest(manifest_path);
      const auto set = inference::predict_dataset(ensemble, m, rotations);
      inference::write_predictions_csv(set, run.out / "predictions.csv");
      const auto failed = std::count_if(set.rows.begin(), set.rows.end(), [](const auto& r) { return !r.ok(); });
      run.config.update({{"manifest", fs::absolute(manifest_path)}, {"models", fs::absolute(models_dir)},
                         {"model_count", ensemble.size()}, {"rotations", rotations}});
      std::cout << "predicted " << set.rows.size() - failed << " cases, " << failed << " failed\n";
    } else if (*eval) {
      const auto m = datapipe::read_manifest(manifest_path);
      const auto rep = pipeline::evaluate_predictions(m, inference::read_predictions_csv(predictions_path));
      write_json(run.out / "report.json", rep);
      run.config.update({{"manifest", fs::absolute(manifest_path)}, {"predictions", fs::absolute(predictions_path)}});
      std::printf("accuracy %.3f\n", rep["accuracy"]["value"].get<double>());
    } else if (*serve) {
      studysvc::StudyService service(run.out / "sessions");
      service.register_dataset(dataset_id, datapipe::read_manifest(manifest_path),
                               predictions_path.empty() ? std::map<std::string, ClassVector>{}
                                                        : probabilities_of(predictions_path));
      run.config.update({{"manifest", fs::absolute(manifest_path)}, {"dataset_id", dataset_id}, {"host", host},
                         {"port", port}});
      finish(run);
      studysvc::StudyServer server(service);
      std::cout << "serving dataset '" << dataset_id << "' on http://" << host << ':' << port << std::endl;
      return server.listen(host, port) ? 0 : 1;
    } else if (*sim) {
      std::vector<studysvc::RaterProfile> parsed;
      for (const auto& text : profiles) {
        std::stringstream ss(text);
        studysvc::RaterProfile p;
        std::string acc, adopt;
        if (!std::getline(ss, p.rater_id, ':') || !std::getline(ss, acc, ':') || !std::getline(ss, adopt))
          throw std::invalid_argument("--rater expects id:accuracy:adoption, got '" + text + "'");
        p.base_accuracy = std::stod(acc);
        p.adoption = std::stod(adopt);
        parsed.push_back(p);
      }
      const auto m = datapipe::read_manifest(manifest_path);
      const auto study = studysvc::simulate_raters(
          m, predictions_path.empty() ? std::map<std::string, ClassVector>{} : probabilities_of(predictions_path),
          parsed, seed);
      const auto files = studysvc::write_responses(study, run.out / "responses");
      run.config.update({{"manifest", fs::absolute(manifest_path)}, {"raters", profiles}});
      std::cout << "wrote " << files.size() << " response files\n";
    } else if (*report) {
      std::vector<studysvc::RaterResponse> responses;
      for (const auto& p : response_files) {
        std::vector<fs::path> files;
        if (fs::is_directory(p)) {
          for (const auto& e : fs::directory_iterator(p))
            if (e.path().extension() == ".jsonl") files.push_back(e.path());
          std::sort(files.begin(), files.end());
        } else {
          files.push_back(p);
        }
        for (const auto& f : files) {
          const auto rs = studysvc::read_responses(f);
          responses.insert(responses.end(), rs.begin(), rs.end());
        }
      }
      const auto m = datapipe::read_manifest(manifest_path);
      auto in = studysvc::report_input(
          m, predictions_path.empty() ? std::map<std::string, ClassVector>{} : probabilities_of(predictions_path),
          responses);
      in.bootstrap_replicates = replicates;
      in.seed = seed;
      write_json(run.out / "report.json", diagstats::augmentation_report(in));
      run.config.update({{"manifest", fs::absolute(manifest_path)}, {"response_count", responses.size()},
                         {"replicates", replicates}});
    }
    finish(run);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "etiobench " << run.subcommand << ": error: " << e.what() << '\n';
    return 1;
  }
}
