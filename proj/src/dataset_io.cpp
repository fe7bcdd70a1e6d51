#include "fedweight/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace fedweight {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kHeaderFile = "header.json";
constexpr const char* kFramesFile = "frames.f32";
constexpr const char* kLabelFile = "label.f32";

void write_f32(const fs::path& path, std::span<const float> values) {
  std::vector<char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError(DatasetError::Kind::Io, path, "cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DatasetError(DatasetError::Kind::Io, path, "write failed");
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(DatasetError::Kind::Io, path, "cannot open payload");
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (bytes.size() < expected * 4) {
    throw DatasetError(DatasetError::Kind::TruncatedPayload, path,
                       "payload has " + std::to_string(bytes.size()) + " bytes, header implies " +
                           std::to_string(expected * 4));
  }
  if (bytes.size() != expected * 4) {
    throw DatasetError(DatasetError::Kind::ShapeMismatch, path,
                       "payload has " + std::to_string(bytes.size()) + " bytes, header implies " +
                           std::to_string(expected * 4));
  }
  std::vector<float> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    }
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

}  // namespace

DatasetError::DatasetError(Kind kind, const fs::path& file, const std::string& what)
    : Error(file.string() + ": " + what), kind_(kind), file_(file) {}

std::string subject_dir_name(int subject_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "subject_%04d", subject_id);
  return buf;
}

void write_subject(const SubjectRecord& record, const fs::path& subject_dir) {
  std::error_code ec;
  fs::create_directories(subject_dir, ec);
  if (ec) throw DatasetError(DatasetError::Kind::Io, subject_dir, ec.message());

  const FrameSequence& f = record.frames;
  json header = {
      {"subject_id", record.subject_id},
      {"T", f.t},
      {"H", f.h},
      {"W", f.w},
      {"C", f.c},
      {"fps", f.fps},
      {"sigma_video", record.sigma_video},
      {"sigma_label", record.sigma_label},
      {"hr_profile", record.hr_profile},
  };
  const fs::path header_path = subject_dir / kHeaderFile;
  std::ofstream out(header_path, std::ios::trunc);
  if (!out) throw DatasetError(DatasetError::Kind::Io, header_path, "cannot open for writing");
  out << header.dump(2) << '\n';
  if (!out) throw DatasetError(DatasetError::Kind::Io, header_path, "write failed");

  write_f32(subject_dir / kFramesFile, f.data);
  std::vector<float> label(record.label.samples().begin(), record.label.samples().end());
  write_f32(subject_dir / kLabelFile, label);
}

SubjectRecord read_subject(const fs::path& subject_dir) {
  const fs::path header_path = subject_dir / kHeaderFile;
  std::ifstream in(header_path);
  if (!in) throw DatasetError(DatasetError::Kind::Io, header_path, "cannot open header");

  SubjectRecord rec;
  try {
    const json header = json::parse(in);
    rec.subject_id = header.at("subject_id").get<int>();
    rec.frames.t = header.at("T").get<int>();
    rec.frames.h = header.at("H").get<int>();
    rec.frames.w = header.at("W").get<int>();
    rec.frames.c = header.at("C").get<int>();
    rec.frames.fps = header.at("fps").get<double>();
    rec.sigma_video = header.at("sigma_video").get<double>();
    rec.sigma_label = header.at("sigma_label").get<double>();
    rec.hr_profile = header.at("hr_profile").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw DatasetError(DatasetError::Kind::MalformedHeader, header_path, e.what());
  }
  const FrameSequence& f = rec.frames;
  if (f.t < 2 || f.h < 1 || f.w < 1 || f.c < 1 || !(f.fps > 0.0) || rec.hr_profile.empty()) {
    throw DatasetError(DatasetError::Kind::MalformedHeader, header_path,
                       "header fields out of range");
  }

  rec.frames.data = read_f32(subject_dir / kFramesFile,
                             static_cast<std::size_t>(f.t) * f.pixels_per_frame());
  const std::vector<float> label =
      read_f32(subject_dir / kLabelFile, static_cast<std::size_t>(f.t - 1));
  try {
    rec.label = PpgTrace(std::vector<double>(label.begin(), label.end()), f.fps);
  } catch (const Error& e) {
    throw DatasetError(DatasetError::Kind::MalformedHeader, subject_dir / kLabelFile, e.what());
  }
  const std::vector<double> hr = expand_hr_profile(rec.hr_profile, static_cast<std::size_t>(f.t));
  rec.true_hr_bpm.assign(hr.begin(), hr.end() - 1);
  return rec;
}

void write_dataset(const std::vector<SubjectRecord>& records, const fs::path& dir) {
  for (const SubjectRecord& r : records) write_subject(r, dir / subject_dir_name(r.subject_id));
}

std::vector<SubjectRecord> read_dataset(const fs::path& dir) {
  std::vector<fs::path> subjects;
  std::error_code ec;
  if (fs::is_directory(dir, ec)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory() && entry.path().filename().string().starts_with("subject_")) {
        subjects.push_back(entry.path());
      }
    }
  }
  if (subjects.empty()) throw DatasetError(DatasetError::Kind::NoSubjects, dir, "no subjects found");
  std::vector<SubjectRecord> out;
  for (const auto& p : subjects) out.push_back(read_subject(p));
  std::sort(out.begin(), out.end(),
            [](const SubjectRecord& a, const SubjectRecord& b) { return a.subject_id < b.subject_id; });
  return out;
}

}  // namespace fedweight
