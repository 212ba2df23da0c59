#include "endonet/container.hpp"
#include "endonet/corpus.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace endonet::corpus {

namespace {

namespace fs = std::filesystem;

constexpr const char* kFrameMagic = "endonet-frames";
constexpr const char* kManifestName = "manifest.json";

std::string frames_file(const std::string& id) { return id + ".frames"; }

std::string header_columns(Index payload) {
  std::string h = "video,t,phase";
  for (const char* t : kToolNames) h += std::string(",") + t;
  for (Index i = 0; i < payload; ++i) h += ",x" + std::to_string(i);
  return h;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

void append_double(std::string& out, double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, r.ptr);
}

template <typename T>
bool parse_number(std::string_view s, T& value) {
  if (s.empty()) return false;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), value);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

// Collects problems; in strict mode the first one is thrown.
struct Reporter {
  bool strict = true;
  std::vector<Diagnostic>* out = nullptr;

  void operator()(const fs::path& file, long line, const std::string& reason) const {
    if (strict) throw DatasetError(file, line, reason);
    out->push_back({file, line, reason});
  }
};

struct Manifest {
  PhaseVocabulary vocabulary;
  ObservationKind kind = ObservationKind::feature;
  nn::Shape frame_shape;
  std::vector<std::string> videos;
  std::optional<CorpusSplit> split;
};

std::optional<Manifest> read_manifest(const fs::path& dir, const Reporter& report) {
  const fs::path path = dir / kManifestName;
  if (!fs::exists(path)) {
    report(path, 0, "manifest is missing");
    return std::nullopt;
  }
  try {
    const auto j = nlohmann::json::parse(io::read_text(path));
    if (j.value("format", std::string()) != "endonet-dataset") throw std::runtime_error("not an endonet dataset manifest");
    if (j.at("version").get<int>() != kDatasetFormatVersion)
      throw std::runtime_error("unsupported dataset version " + std::to_string(j.at("version").get<int>()));
    Manifest m;
    m.vocabulary = j.at("vocabulary").get<PhaseVocabulary>();
    m.kind = observation_kind_from_string(j.at("observation").at("kind").get<std::string>());
    m.frame_shape = j.at("observation").at("shape").get<nn::Shape>();
    if (m.frame_shape.empty()) throw std::runtime_error("observation shape is empty");
    for (auto e : m.frame_shape)
      if (e <= 0) throw std::runtime_error("observation extents must be positive");
    m.videos = j.at("videos").get<std::vector<std::string>>();
    if (j.contains("split") && !j.at("split").is_null()) m.split = j.at("split").get<CorpusSplit>();
    if (m.split) {
      std::vector<std::string> known = m.videos;
      std::sort(known.begin(), known.end());
      auto check = [&](const std::vector<std::string>& ids) {
        for (const auto& id : ids)
          if (!std::binary_search(known.begin(), known.end(), id))
            throw std::runtime_error("split references unknown video '" + id + "'");
      };
      check(m.split->finetune);
      check(m.split->evaluation);
      for (const auto& f : m.split->folds) check(f);
    }
    return m;
  } catch (const DatasetError&) {
    throw;
  } catch (const std::exception& e) {
    report(path, 0, e.what());
    return std::nullopt;
  }
}

// Returns the parsed video; problems go through `report`.
Video read_video(const fs::path& path, const std::string& id, const Manifest& m, const Reporter& report) {
  Video v;
  v.id = id;
  std::ifstream in(path);
  if (!in) {
    report(path, 0, "cannot open video file");
    return v;
  }
  const Index payload = nn::shape_size(m.frame_shape);
  const std::size_t expected_fields = 3 + kTools + static_cast<std::size_t>(payload);
  std::string line;
  long lineno = 0;

  if (!std::getline(in, line) || line != std::string(kFrameMagic) + "," + std::to_string(kDatasetFormatVersion)) {
    report(path, 1, "expected header '" + std::string(kFrameMagic) + "," + std::to_string(kDatasetFormatVersion) + "'");
    return v;
  }
  lineno = 1;
  if (!std::getline(in, line) || line != header_columns(payload)) {
    report(path, 2, "column header does not match " + std::to_string(kTools) + " tools and " + std::to_string(payload) +
                        " payload values");
    return v;
  }
  lineno = 2;

  std::vector<std::array<int, kTools>> tools;
  std::vector<double> obs;
  long expected_t = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      report(path, lineno, "empty line");
      continue;
    }
    const auto f = split_fields(line);
    if (f.size() < 3 + kTools) {
      report(path, lineno, "expected " + std::to_string(kTools) + " tool flags, found " +
                               std::to_string(f.size() < 3 ? 0 : f.size() - 3));
      continue;
    }
    if (f.size() != expected_fields) {
      report(path, lineno, "expected " + std::to_string(expected_fields) + " fields (" + std::to_string(kTools) +
                               " tool flags and " + std::to_string(payload) + " payload values), found " +
                               std::to_string(f.size()));
      continue;
    }
    bool ok = true;
    if (f[0] != id) {
      report(path, lineno, "video id '" + std::string(f[0]) + "' does not match file for '" + id + "'");
      ok = false;
    }
    long t = 0;
    if (!parse_number(f[1], t)) {
      report(path, lineno, "timestamp '" + std::string(f[1]) + "' is not an integer");
      ok = false;
      ++expected_t;
    } else {
      if (t != expected_t) {
        report(path, lineno, "timestamp " + std::to_string(t) + " breaks the consecutive 1 fps grid (expected " +
                                 std::to_string(expected_t) + ")");
        ok = false;
      }
      expected_t = t + 1;
    }
    const int phase = m.vocabulary.index_of(std::string(f[2]));
    if (phase < 0) {
      report(path, lineno, "phase '" + std::string(f[2]) + "' is not in vocabulary '" + m.vocabulary.name + "'");
      ok = false;
    }
    std::array<int, kTools> flags{};
    for (int k = 0; k < kTools; ++k) {
      const auto s = f[static_cast<std::size_t>(3 + k)];
      if (s != "0" && s != "1") {
        report(path, lineno, std::string("tool flag for ") + kToolNames[static_cast<std::size_t>(k)] + " must be 0 or 1");
        ok = false;
      }
      flags[static_cast<std::size_t>(k)] = s == "1";
    }
    std::vector<double> row(static_cast<std::size_t>(payload));
    for (Index i = 0; i < payload; ++i) {
      const auto s = f[static_cast<std::size_t>(3 + kTools + i)];
      double x = 0.0;
      if (!parse_number(s, x) || !std::isfinite(x)) {
        report(path, lineno, "payload value " + std::to_string(i) + " '" + std::string(s) + "' is not a finite number");
        ok = false;
        break;
      }
      row[static_cast<std::size_t>(i)] = x;
    }
    if (!ok) continue;
    v.phases.push_back(phase);
    tools.push_back(flags);
    obs.insert(obs.end(), row.begin(), row.end());
  }
  const Index n = v.frames();
  v.tools.resize(n, kTools);
  v.observations.resize(n, payload);
  for (Index r = 0; r < n; ++r) {
    for (int k = 0; k < kTools; ++k) v.tools(r, k) = tools[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)];
    for (Index i = 0; i < payload; ++i) v.observations(r, i) = obs[static_cast<std::size_t>(r * payload + i)];
  }
  return v;
}

Dataset read_impl(const fs::path& dir, const Reporter& report) {
  Dataset d;
  const auto m = read_manifest(dir, report);
  if (!m) return d;
  d.vocabulary = m->vocabulary;
  d.kind = m->kind;
  d.frame_shape = m->frame_shape;
  d.split = m->split;
  for (const auto& id : m->videos) d.videos.push_back(read_video(dir / frames_file(id), id, *m, report));
  return d;
}

}  // namespace

std::string Diagnostic::str() const {
  return file.string() + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + message;
}

void write_dataset(const Dataset& d, const fs::path& dir) {
  d.vocabulary.validate();
  const Index payload = nn::shape_size(d.frame_shape);
  fs::create_directories(dir);
  std::vector<std::string> ids;
  for (const auto& v : d.videos) {
    if (v.id.empty() || v.id.find_first_of(",/\\\n") != std::string::npos)
      throw std::invalid_argument("write_dataset: invalid video id '" + v.id + "'");
    if (v.tools.rows() != v.frames() || v.tools.cols() != kTools || v.observations.rows() != v.frames() ||
        v.observations.cols() != payload)
      throw std::invalid_argument("write_dataset: video '" + v.id + "' has inconsistent record shapes");
    std::string text = std::string(kFrameMagic) + "," + std::to_string(kDatasetFormatVersion) + "\n" +
                       header_columns(payload) + "\n";
    const auto& vocab = d.vocabulary.phases;
    for (Index t = 0; t < v.frames(); ++t) {
      const int p = v.phases[static_cast<std::size_t>(t)];
      if (p < 0 || p >= d.vocabulary.size()) throw std::invalid_argument("write_dataset: phase index out of range");
      text += v.id;
      text += ',';
      text += std::to_string(t);
      text += ',';
      text += vocab[static_cast<std::size_t>(p)].id;
      for (int k = 0; k < kTools; ++k) {
        const int flag = v.tools(t, k);
        if (flag != 0 && flag != 1) throw std::invalid_argument("write_dataset: tool flags must be 0 or 1");
        text += flag ? ",1" : ",0";
      }
      for (Index i = 0; i < payload; ++i) {
        text += ',';
        append_double(text, v.observations(t, i));
      }
      text += '\n';
    }
    io::write_text_atomic(dir / frames_file(v.id), text);
    ids.push_back(v.id);
  }
  nlohmann::json manifest = {{"format", "endonet-dataset"},
                             {"version", kDatasetFormatVersion},
                             {"vocabulary", d.vocabulary},
                             {"observation", {{"kind", to_string(d.kind)}, {"shape", d.frame_shape}}},
                             {"videos", ids},
                             {"split", d.split ? nlohmann::json(*d.split) : nlohmann::json(nullptr)}};
  io::write_text_atomic(dir / kManifestName, manifest.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) { return read_impl(dir, Reporter{true, nullptr}); }

std::vector<Diagnostic> validate_dataset(const fs::path& dir) {
  std::vector<Diagnostic> out;
  read_impl(dir, Reporter{false, &out});
  return out;
}

}  // namespace endonet::corpus
