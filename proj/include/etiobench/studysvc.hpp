#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "etiobench/datapipe.hpp"
#include "etiobench/diagstats.hpp"
#include "etiobench/voxvol.hpp"
#include "json.hpp"

namespace etio::studysvc {

enum class ErrorCode {
  bad_request,
  unknown_dataset,
  unknown_session,
  invalid_mode,
  predictions_required,
  out_of_order,
  duplicate_response,
  unknown_label,
  session_finalized,
  session_complete,
  session_incomplete,
  dataset_mismatch,
};

std::string_view code_name(ErrorCode code);

class StudyError : public std::runtime_error {
 public:
  StudyError(ErrorCode code, const std::string& message) : std::runtime_error(message), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

enum class TaskMode { images_only = 0, images_clinical = 1, images_clinical_ai = 2 };

std::string_view to_string(TaskMode mode);
/// Throws StudyError(invalid_mode).
TaskMode parse_mode(std::string_view text);

struct RaterResponse {
  std::string rater_id;
  std::string case_id;
  Etiology label = Etiology::aneurysm;
  TaskMode task_mode = TaskMode::images_only;
  std::int64_t timestamp = 0;  // ms since epoch; simulated responses use the case position

  bool operator==(const RaterResponse&) const = default;
};

nlohmann::ordered_json to_json(const RaterResponse& r);
RaterResponse response_from_json(const nlohmann::json& j);

enum class SessionStatus { open, finalized };

struct StudySession {
  std::string session_id;
  std::string rater_id;
  std::string dataset_id;
  TaskMode task_mode = TaskMode::images_only;
  std::uint64_t seed = 0;
  std::vector<std::string> case_order;
  std::size_t cursor = 0;
  std::vector<RaterResponse> responses;  // in cursor order
  SessionStatus status = SessionStatus::open;

  bool complete() const { return cursor == case_order.size(); }
  bool operator==(const StudySession&) const = default;
};

nlohmann::ordered_json session_json(const StudySession& s);

/// Dataset order shuffled by a seed derived from (dataset id, seed).
std::vector<std::string> shuffled_case_order(const datapipe::Manifest& manifest, const std::string& dataset_id,
                                             std::uint64_t seed);

/// Rebuilds a session from its append-only event log.
StudySession replay_session(const std::filesystem::path& log_path);

/// Level 40 / width 80 HU window, one 8-bit grayscale PNG per axial slice.
inline constexpr double kWindowLevel = 40.0;
inline constexpr double kWindowWidth = 80.0;
std::string encode_png_gray(const std::vector<std::uint8_t>& pixels, int width, int height);
std::vector<std::string> render_slices_png(const voxvol::Volume& volume);

/// "93.5%".
std::string percent_label(double p);

struct Dataset {
  datapipe::Manifest manifest;
  std::map<std::string, ClassVector> predictions;  // empty when no model output is registered
};

/// Sessions over registered datasets. Thread-safe: registry access is shared,
/// each session's mutations are serialized by its own lock.
class StudyService {
 public:
  /// With a log directory every session is persisted as <session_id>.jsonl and
  /// existing logs are replayed on construction.
  explicit StudyService(std::filesystem::path log_dir = {});
  ~StudyService();
  StudyService(const StudyService&) = delete;
  StudyService& operator=(const StudyService&) = delete;

  void register_dataset(const std::string& dataset_id, datapipe::Manifest manifest,
                        std::map<std::string, ClassVector> predictions = {});

  StudySession create_session(const std::string& rater_id, TaskMode mode, const std::string& dataset_id,
                              std::uint64_t seed);
  StudySession session(const std::string& session_id) const;
  std::vector<StudySession> sessions(const std::string& dataset_id) const;

  /// Payload for the case at `index`, which must equal the cursor.
  nlohmann::ordered_json case_payload(const std::string& session_id, std::size_t index) const;
  nlohmann::ordered_json current_case(const std::string& session_id) const;

  /// Records a response for the current case and advances the cursor.
  nlohmann::ordered_json submit_response(const std::string& session_id, const std::string& case_id,
                                         const std::string& label, std::optional<std::int64_t> timestamp = {});

  StudySession finalize(const std::string& session_id);

  /// Report over all finalized sessions of a dataset.
  nlohmann::ordered_json report(const std::string& dataset_id,
                                int replicates = diagstats::kDefaultBootstrapReplicates, std::uint64_t seed = 0) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Builds the augmentation report. Every session must be finalized and belong to the dataset.
nlohmann::ordered_json finalize_and_report(const std::vector<StudySession>& sessions, const std::string& dataset_id,
                                           const Dataset& dataset,
                                           int replicates = diagstats::kDefaultBootstrapReplicates,
                                           std::uint64_t seed = 0);

struct RaterProfile {
  std::string rater_id;
  double base_accuracy = 0.7;
  double adoption = 0.5;  // chance of taking the model's argmax in mode 3
};

/// task mode -> rater -> responses in manifest order.
using SimulatedStudy = std::map<TaskMode, std::map<std::string, std::vector<RaterResponse>>>;

/// Modes 1 and 2 draw the rater's own guess independently (right with probability
/// base_accuracy, otherwise a uniform wrong label). Mode 3 takes the model argmax
/// with probability `adoption`, else repeats the mode-2 answer.
SimulatedStudy simulate_raters(const datapipe::Manifest& manifest, const std::map<std::string, ClassVector>& predictions,
                               const std::vector<RaterProfile>& profiles, std::uint64_t seed);

/// One JSON-lines file per (mode, rater): <mode>__<rater>.jsonl. Returns the paths written.
std::vector<std::filesystem::path> write_responses(const SimulatedStudy& study, const std::filesystem::path& dir);
std::vector<RaterResponse> read_responses(const std::filesystem::path& path);

diagstats::ReportInput report_input(const datapipe::Manifest& manifest,
                                    const std::map<std::string, ClassVector>& predictions,
                                    const std::vector<RaterResponse>& responses);

/// HTTP JSON front end. Errors come back as {"error": {"code", "message"}}.
class StudyServer {
 public:
  explicit StudyServer(StudyService& service);
  ~StudyServer();

  /// Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Blocks until stopped.
  bool listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace etio::studysvc
