#include <algorithm>
#include <chrono>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <shared_mutex>

#include "etiobench/seeding.hpp"
#include "etiobench/studysvc.hpp"
#include "httplib.h"

namespace etio::studysvc {

using nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 12> kCodeNames = {
    "bad_request",  "unknown_dataset",    "unknown_session",   "invalid_mode",
    "predictions_required", "out_of_order", "duplicate_response", "unknown_label",
    "session_finalized", "session_complete", "session_incomplete", "dataset_mismatch"};

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void append_line(const std::filesystem::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  out << j.dump() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("cannot append to session log " + path.string());
}

Etiology parse_label(std::string_view text) {
  const auto e = parse_etiology(text);
  if (!e) throw StudyError(ErrorCode::unknown_label, "unknown label '" + std::string(text) + "'");
  return *e;
}

}  // namespace

std::string_view code_name(ErrorCode code) { return kCodeNames[static_cast<std::size_t>(code)]; }

std::string_view to_string(TaskMode mode) { return diagstats::kTaskModes[static_cast<std::size_t>(mode)]; }

TaskMode parse_mode(std::string_view text) {
  for (std::size_t i = 0; i < diagstats::kTaskModes.size(); ++i)
    if (text == diagstats::kTaskModes[i]) return static_cast<TaskMode>(i);
  throw StudyError(ErrorCode::invalid_mode, "unknown task mode '" + std::string(text) + "'");
}

ordered_json to_json(const RaterResponse& r) {
  return {{"rater_id", r.rater_id},
          {"case_id", r.case_id},
          {"label", to_token(r.label)},
          {"task_mode", to_string(r.task_mode)},
          {"timestamp", r.timestamp}};
}

RaterResponse response_from_json(const nlohmann::json& j) {
  try {
    RaterResponse r;
    r.rater_id = j.at("rater_id").get<std::string>();
    r.case_id = j.at("case_id").get<std::string>();
    r.label = parse_label(j.at("label").get<std::string>());
    r.task_mode = parse_mode(j.at("task_mode").get<std::string>());
    r.timestamp = j.at("timestamp").get<std::int64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw StudyError(ErrorCode::bad_request, std::string("malformed response record: ") + e.what());
  }
}

ordered_json session_json(const StudySession& s) {
  return {{"session_id", s.session_id},
          {"rater_id", s.rater_id},
          {"dataset_id", s.dataset_id},
          {"task_mode", to_string(s.task_mode)},
          {"seed", s.seed},
          {"case_count", s.case_order.size()},
          {"cursor", s.cursor},
          {"status", s.status == SessionStatus::open ? "open" : "finalized"}};
}

std::vector<std::string> shuffled_case_order(const datapipe::Manifest& manifest, const std::string& dataset_id,
                                             std::uint64_t seed) {
  std::vector<std::string> order;
  for (const auto& c : manifest.cases) order.push_back(c.case_id);
  std::mt19937_64 rng(derive_seed(seed, {fnv1a(dataset_id)}));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

StudySession replay_session(const std::filesystem::path& log_path) {
  std::ifstream in(log_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open session log " + log_path.string());
  StudySession s;
  bool created = false;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto event = j.at("event").get<std::string>();
      if (event == "created") {
        s.session_id = j.at("session_id").get<std::string>();
        s.rater_id = j.at("rater_id").get<std::string>();
        s.dataset_id = j.at("dataset_id").get<std::string>();
        s.task_mode = parse_mode(j.at("task_mode").get<std::string>());
        s.seed = j.at("seed").get<std::uint64_t>();
        s.case_order = j.at("case_order").get<std::vector<std::string>>();
        created = true;
      } else if (!created) {
        throw std::runtime_error("event before creation");
      } else if (event == "response") {
        if (s.status == SessionStatus::finalized || s.complete()) throw std::runtime_error("response after close");
        auto r = response_from_json(j.at("response"));
        if (r.case_id != s.case_order[s.cursor]) throw std::runtime_error("response out of order");
        s.responses.push_back(std::move(r));
        ++s.cursor;
      } else if (event == "finalized") {
        s.status = SessionStatus::finalized;
      } else {
        throw std::runtime_error("unknown event '" + event + "'");
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(log_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!created) throw std::runtime_error(log_path.string() + ": no creation event");
  return s;
}

struct StudyService::Impl {
  struct Entry {
    mutable std::mutex mutex;
    StudySession session;
  };

  std::filesystem::path log_dir;
  mutable std::shared_mutex registry;
  std::map<std::string, std::shared_ptr<const Dataset>> datasets;
  std::map<std::string, std::shared_ptr<Entry>> sessions;
  std::uint64_t next_id = 1;

  std::shared_ptr<Entry> entry(const std::string& id) const {
    std::shared_lock lock(registry);
    const auto it = sessions.find(id);
    if (it == sessions.end()) throw StudyError(ErrorCode::unknown_session, "unknown session '" + id + "'");
    return it->second;
  }

  std::shared_ptr<const Dataset> dataset(const std::string& id) const {
    std::shared_lock lock(registry);
    const auto it = datasets.find(id);
    if (it == datasets.end()) throw StudyError(ErrorCode::unknown_dataset, "unknown dataset '" + id + "'");
    return it->second;
  }

  void log(const StudySession& s, const ordered_json& event) const {
    if (!log_dir.empty()) append_line(log_dir / (s.session_id + ".jsonl"), event);
  }
};

StudyService::StudyService(std::filesystem::path log_dir) : impl_(std::make_unique<Impl>()) {
  impl_->log_dir = std::move(log_dir);
  if (impl_->log_dir.empty()) return;
  std::filesystem::create_directories(impl_->log_dir);
  std::vector<std::filesystem::path> logs;
  for (const auto& e : std::filesystem::directory_iterator(impl_->log_dir))
    if (e.path().extension() == ".jsonl") logs.push_back(e.path());
  std::sort(logs.begin(), logs.end());
  for (const auto& p : logs) {
    auto entry = std::make_shared<Impl::Entry>();
    entry->session = replay_session(p);
    const auto& id = entry->session.session_id;
    if (id.size() > 1) impl_->next_id = std::max<std::uint64_t>(impl_->next_id, std::stoull(id.substr(1)) + 1);
    impl_->sessions[id] = std::move(entry);
  }
}

StudyService::~StudyService() = default;

void StudyService::register_dataset(const std::string& dataset_id, datapipe::Manifest manifest,
                                    std::map<std::string, ClassVector> predictions) {
  if (dataset_id.empty() || manifest.cases.empty())
    throw StudyError(ErrorCode::bad_request, "dataset needs an id and at least one case");
  std::set<std::string> known;
  for (const auto& c : manifest.cases) known.insert(c.case_id);
  for (const auto& [id, p] : predictions)
    if (!known.contains(id)) throw StudyError(ErrorCode::bad_request, "prediction for unknown case " + id);
  if (!predictions.empty())
    for (const auto& c : manifest.cases)
      if (!predictions.contains(c.case_id))
        throw StudyError(ErrorCode::bad_request, "no model prediction for case " + c.case_id);
  auto ds = std::make_shared<Dataset>(Dataset{std::move(manifest), std::move(predictions)});
  std::unique_lock lock(impl_->registry);
  impl_->datasets[dataset_id] = std::move(ds);
}

StudySession StudyService::create_session(const std::string& rater_id, TaskMode mode, const std::string& dataset_id,
                                          std::uint64_t seed) {
  if (rater_id.empty()) throw StudyError(ErrorCode::bad_request, "rater_id is required");
  const auto ds = impl_->dataset(dataset_id);
  if (mode == TaskMode::images_clinical_ai && ds->predictions.empty())
    throw StudyError(ErrorCode::predictions_required,
                     "dataset '" + dataset_id + "' has no registered model predictions for images_clinical_ai");
  auto entry = std::make_shared<Impl::Entry>();
  auto& s = entry->session;
  s.rater_id = rater_id;
  s.dataset_id = dataset_id;
  s.task_mode = mode;
  s.seed = seed;
  s.case_order = shuffled_case_order(ds->manifest, dataset_id, seed);

  std::unique_lock lock(impl_->registry);
  char id[24];
  std::snprintf(id, sizeof id, "s%06llu", static_cast<unsigned long long>(impl_->next_id++));
  s.session_id = id;
  impl_->log(s, {{"event", "created"},
                 {"session_id", s.session_id},
                 {"rater_id", s.rater_id},
                 {"dataset_id", s.dataset_id},
                 {"task_mode", to_string(s.task_mode)},
                 {"seed", s.seed},
                 {"case_order", s.case_order}});
  impl_->sessions[s.session_id] = entry;
  return s;
}

StudySession StudyService::session(const std::string& session_id) const {
  const auto e = impl_->entry(session_id);
  std::lock_guard lock(e->mutex);
  return e->session;
}

std::vector<StudySession> StudyService::sessions(const std::string& dataset_id) const {
  std::vector<std::shared_ptr<Impl::Entry>> entries;
  {
    std::shared_lock lock(impl_->registry);
    for (const auto& [id, e] : impl_->sessions) entries.push_back(e);
  }
  std::vector<StudySession> out;
  for (const auto& e : entries) {
    std::lock_guard lock(e->mutex);
    if (e->session.dataset_id == dataset_id) out.push_back(e->session);
  }
  return out;
}

ordered_json StudyService::case_payload(const std::string& session_id, std::size_t index) const {
  StudySession s = session(session_id);
  if (s.status == SessionStatus::finalized)
    throw StudyError(ErrorCode::session_finalized, "session " + session_id + " is finalized");
  if (s.complete()) throw StudyError(ErrorCode::session_complete, "session " + session_id + " has no cases left");
  if (index != s.cursor)
    throw StudyError(ErrorCode::out_of_order, "case " + std::to_string(index) + " requested but the session is at case " +
                                                  std::to_string(s.cursor));
  const auto ds = impl_->dataset(s.dataset_id);
  const auto& record = ds->manifest.find(s.case_order[index]);

  ordered_json j;
  j["session_id"] = s.session_id;
  j["task_mode"] = to_string(s.task_mode);
  j["index"] = index;
  j["case_count"] = s.case_order.size();
  j["case_id"] = record.case_id;
  j["window"] = {{"level", kWindowLevel}, {"width", kWindowWidth}};
  ordered_json slices = ordered_json::array();
  for (const auto& png : render_slices_png(voxvol::read_volume(ds->manifest.resolve(record))))
    slices.push_back(httplib::detail::base64_encode(png));
  j["slices"] = slices;
  if (s.task_mode != TaskMode::images_only)
    j["clinical"] = {{"age", record.age},
                     {"sex", record.sex},
                     {"known_hypertension", record.known_hypertension},
                     {"impaired_coagulation", record.impaired_coagulation},
                     {"complaint", record.complaint}};
  if (s.task_mode == TaskMode::images_clinical_ai) {
    const auto& p = ds->predictions.at(record.case_id);
    ordered_json table = ordered_json::array();
    for (Etiology e : kAllEtiologies)
      table.push_back({{"etiology", to_token(e)},
                       {"name", display_name(e)},
                       {"probability", p[index_of(e)]},
                       {"percent", percent_label(p[index_of(e)])}});
    j["ai_predictions"] = table;
  }
  return j;
}

ordered_json StudyService::current_case(const std::string& session_id) const {
  return case_payload(session_id, session(session_id).cursor);
}

ordered_json StudyService::submit_response(const std::string& session_id, const std::string& case_id,
                                           const std::string& label, std::optional<std::int64_t> timestamp) {
  const auto e = impl_->entry(session_id);
  std::lock_guard lock(e->mutex);
  auto& s = e->session;
  if (s.status == SessionStatus::finalized)
    throw StudyError(ErrorCode::session_finalized, "session " + session_id + " is finalized");
  const Etiology chosen = parse_label(label);
  if (std::any_of(s.responses.begin(), s.responses.end(), [&](const auto& r) { return r.case_id == case_id; }))
    throw StudyError(ErrorCode::duplicate_response, "case " + case_id + " already answered");
  if (s.complete()) throw StudyError(ErrorCode::session_complete, "session " + session_id + " has no cases left");
  if (case_id != s.case_order[s.cursor])
    throw StudyError(ErrorCode::out_of_order, "case " + case_id + " is not the current case");

  RaterResponse r{s.rater_id, case_id, chosen, s.task_mode, timestamp.value_or(now_ms())};
  impl_->log(s, {{"event", "response"}, {"response", to_json(r)}});
  s.responses.push_back(std::move(r));
  ++s.cursor;
  return {{"session_id", s.session_id},
          {"case_id", case_id},
          {"cursor", s.cursor},
          {"case_count", s.case_order.size()},
          {"complete", s.complete()}};
}

StudySession StudyService::finalize(const std::string& session_id) {
  const auto e = impl_->entry(session_id);
  std::lock_guard lock(e->mutex);
  auto& s = e->session;
  if (s.status == SessionStatus::finalized)
    throw StudyError(ErrorCode::session_finalized, "session " + session_id + " is already finalized");
  if (!s.complete())
    throw StudyError(ErrorCode::session_incomplete, "session " + session_id + " answered " + std::to_string(s.cursor) +
                                                        " of " + std::to_string(s.case_order.size()) + " cases");
  impl_->log(s, {{"event", "finalized"}});
  s.status = SessionStatus::finalized;
  return s;
}

ordered_json StudyService::report(const std::string& dataset_id, int replicates, std::uint64_t seed) const {
  const auto ds = impl_->dataset(dataset_id);
  auto all = sessions(dataset_id);
  std::erase_if(all, [](const StudySession& s) { return s.status != SessionStatus::finalized; });
  if (all.empty())
    throw StudyError(ErrorCode::session_incomplete, "dataset '" + dataset_id + "' has no finalized sessions");
  return finalize_and_report(all, dataset_id, *ds, replicates, seed);
}

diagstats::ReportInput report_input(const datapipe::Manifest& manifest,
                                    const std::map<std::string, ClassVector>& predictions,
                                    const std::vector<RaterResponse>& responses) {
  diagstats::ReportInput in;
  for (const auto& c : manifest.cases) {
    in.case_ids.push_back(c.case_id);
    in.truth[c.case_id] = c.label;
  }
  in.model = predictions;
  for (const auto& r : responses) {
    auto& slot = in.responses[std::string(to_string(r.task_mode))][r.rater_id];
    if (!slot.emplace(r.case_id, r.label).second)
      throw StudyError(ErrorCode::duplicate_response, "rater " + r.rater_id + " answered case " + r.case_id + " twice in " +
                                                          std::string(to_string(r.task_mode)));
  }
  return in;
}

ordered_json finalize_and_report(const std::vector<StudySession>& sessions, const std::string& dataset_id,
                                 const Dataset& dataset, int replicates, std::uint64_t seed) {
  std::vector<RaterResponse> responses;
  for (const auto& s : sessions) {
    if (s.dataset_id != dataset_id)
      throw StudyError(ErrorCode::dataset_mismatch, "session " + s.session_id + " belongs to dataset '" + s.dataset_id + "'");
    if (s.status != SessionStatus::finalized || !s.complete())
      throw StudyError(ErrorCode::session_incomplete, "session " + s.session_id + " is not finalized");
    responses.insert(responses.end(), s.responses.begin(), s.responses.end());
  }
  auto in = report_input(dataset.manifest, dataset.predictions, responses);
  in.bootstrap_replicates = replicates;
  in.seed = seed;
  ordered_json j;
  j["dataset_id"] = dataset_id;
  j["session_count"] = sessions.size();
  try {
    j.update(diagstats::augmentation_report(in));
  } catch (const diagstats::StatsError& e) {
    throw StudyError(ErrorCode::session_incomplete, e.what());
  }
  return j;
}

}  // namespace etio::studysvc
