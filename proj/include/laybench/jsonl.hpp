#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace laybench::jsonl {

using ordered_json = nlohmann::ordered_json;

// Calls `fn(line_number, object)` for each non-blank line. Throws ParseError
// naming the path and 1-based line on malformed JSON or a non-object line.
void for_each_object(const std::filesystem::path& path,
                     const std::function<void(std::size_t, const nlohmann::json&)>& fn);

std::vector<nlohmann::json> read_all(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

// Reads an append-only log. A final line that lacks its newline and does not
// parse is a torn write: it is dropped and, when `repair` is set, cut from the
// file. Any other malformed line is a ParseError. A missing file reads empty.
std::vector<nlohmann::ordered_json> read_log(const std::filesystem::path& path, bool repair);

// Writes to a sibling temp file, fsyncs, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Serialises rows as one compact JSON object per line with a final newline.
template <typename Json>
std::string to_lines(const std::vector<Json>& rows) {
  std::string out;
  for (const auto& row : rows) {
    out += row.dump();
    out += '\n';
  }
  return out;
}

// Append-only line writer. `append` returns after the line is on disk
// (write + fsync).
class DurableAppender {
 public:
  explicit DurableAppender(const std::filesystem::path& path);
  ~DurableAppender();
  DurableAppender(const DurableAppender&) = delete;
  DurableAppender& operator=(const DurableAppender&) = delete;

  void append(std::string_view line);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

}  // namespace laybench::jsonl
