#pragma once

// Line-delimited JSON run logs. metrics.jsonl holds only values that are a
// pure function of the configuration; wall-clock timings go to a separate file
// so metrics of identical runs compare byte for byte.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedbiot/errors.hpp"
#include "fedbiot/fed/round.hpp"
#include "fedbiot/model/lm.hpp"

namespace fedbiot {

using Json = nlohmann::json;

class JsonlWriter {
 public:
  JsonlWriter() = default;
  explicit JsonlWriter(const std::filesystem::path& path) : path_(path) {
    os_.open(path, std::ios::app);
    if (!os_) throw FileError("cannot open " + path.string() + " for writing");
  }

  void write(const Json& record) {
    os_ << record.dump() << '\n';
    os_.flush();
    if (!os_) throw FileError("write to " + path_.string() + " failed");
  }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream os_;
};

inline std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FileError("cannot read " + path.string());
  std::vector<Json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw FileError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline Json round_record(const RoundReport& r) {
  return {{"type", "round"},
          {"round", r.round},
          {"client_losses", r.client_losses},
          {"align_losses", r.align_losses},
          {"adapter_norm", r.adapter_norm}};
}

inline Json timing_record(const RoundReport& r) { return {{"round", r.round}, {"wall_time_s", r.wall_time_s}}; }

inline Json eval_record(const std::string& phase, std::size_t round, const EvalResult& emu, const EvalResult& fu) {
  return {{"type", "eval"},
          {"phase", phase},
          {"round", round},
          {"adapemu_loss", emu.loss},
          {"adapemu_exact_match", emu.exact_match},
          {"adapfu_loss", fu.loss},
          {"adapfu_exact_match", fu.exact_match},
          {"samples", emu.samples}};
}

// Keeps the records a resumed run would not rewrite: everything logged before
// the first round plus round-indexed records strictly before `next_round`.
inline void truncate_metrics(const std::filesystem::path& path, std::size_t next_round) {
  if (!std::filesystem::exists(path)) return;
  std::vector<Json> kept;
  for (auto& rec : read_jsonl(path)) {
    const std::string type = rec.value("type", "");
    const std::string phase = rec.value("phase", "");
    const bool per_round = type == "round" || (type == "eval" && (phase == "round" || phase == "final"));
    if (!per_round || rec.value("round", std::size_t{0}) < next_round) {
      if (!(type == "eval" && phase == "final")) kept.push_back(std::move(rec));
    }
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::trunc);
    for (const auto& rec : kept) os << rec.dump() << '\n';
    if (!os) throw FileError("cannot rewrite " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

// Timings carry a plain round index.
inline void truncate_timings(const std::filesystem::path& path, std::size_t next_round) {
  if (!std::filesystem::exists(path)) return;
  std::vector<Json> kept;
  for (auto& rec : read_jsonl(path))
    if (rec.value("round", std::size_t{0}) < next_round) kept.push_back(std::move(rec));
  std::ofstream os(path, std::ios::trunc);
  for (const auto& rec : kept) os << rec.dump() << '\n';
}

}  // namespace fedbiot
