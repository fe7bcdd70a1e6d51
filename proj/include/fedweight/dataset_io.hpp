#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fedweight/error.hpp"
#include "fedweight/synth.hpp"

namespace fedweight {

class DatasetError : public Error {
 public:
  enum class Kind { NoSubjects, MalformedHeader, ShapeMismatch, TruncatedPayload, Io };

  DatasetError(Kind kind, const std::filesystem::path& file, const std::string& what);

  Kind kind() const { return kind_; }
  const std::filesystem::path& file() const { return file_; }

 private:
  Kind kind_;
  std::filesystem::path file_;
};

/// Directory name of one subject inside a dataset root, e.g. "subject_0007".
std::string subject_dir_name(int subject_id);

/// Writes one directory per record: header.json, frames.f32, label.f32.
/// Payloads are little-endian IEEE-754 binary32.
void write_dataset(const std::vector<SubjectRecord>& records,
                   const std::filesystem::path& dir);

/// Reads every subject_* directory under `dir`, ordered by subject id.
std::vector<SubjectRecord> read_dataset(const std::filesystem::path& dir);

void write_subject(const SubjectRecord& record, const std::filesystem::path& subject_dir);
SubjectRecord read_subject(const std::filesystem::path& subject_dir);

}  // namespace fedweight
