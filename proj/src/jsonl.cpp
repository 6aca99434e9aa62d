#include "laybench/jsonl.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "laybench/error.hpp"

namespace laybench::jsonl {

namespace {

void write_all(int fd, std::string_view data, const std::filesystem::path& path) {
  while (!data.empty()) {
    ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("write to " + path.string() + " failed: " + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return buffer.str();
}

void for_each_object(const std::filesystem::path& path,
                     const std::function<void(std::size_t, const nlohmann::json&)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json object;
    try {
      object = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_number) + ": malformed JSON: " + e.what());
    }
    if (!object.is_object()) {
      throw ParseError(path.string() + ":" + std::to_string(line_number) + ": expected a JSON object");
    }
    fn(line_number, object);
  }
  if (in.bad()) throw IoError("read failed: " + path.string());
}

std::vector<nlohmann::json> read_all(const std::filesystem::path& path) {
  std::vector<nlohmann::json> rows;
  for_each_object(path, [&](std::size_t, const nlohmann::json& object) { rows.push_back(object); });
  return rows;
}

std::vector<nlohmann::ordered_json> read_log(const std::filesystem::path& path, bool repair) {
  std::vector<nlohmann::ordered_json> rows;
  if (!std::filesystem::exists(path)) return rows;
  const std::string content = read_file(path);
  std::size_t line_number = 0;
  std::size_t start = 0;
  while (start < content.size()) {
    ++line_number;
    const auto newline = content.find('\n', start);
    const bool terminated = newline != std::string::npos;
    const auto end = terminated ? newline : content.size();
    std::string_view line(content.data() + start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) {
      nlohmann::ordered_json object;
      bool ok = true;
      try {
        object = nlohmann::ordered_json::parse(line);
      } catch (const nlohmann::ordered_json::parse_error&) {
        ok = false;
      }
      if (!ok || !object.is_object()) {
        if (!terminated) {
          if (repair) std::filesystem::resize_file(path, start);
          break;
        }
        throw ParseError(path.string() + ":" + std::to_string(line_number) + ": corrupt record");
      }
      rows.push_back(std::move(object));
      if (!terminated && repair) std::ofstream(path, std::ios::binary | std::ios::app) << '\n';
    }
    start = terminated ? newline + 1 : content.size();
  }
  return rows;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot create " + tmp.string() + ": " + std::strerror(errno));
  try {
    write_all(fd, content, tmp);
    if (::fsync(fd) != 0) throw IoError("fsync failed: " + tmp.string());
  } catch (...) {
    ::close(fd);
    ::unlink(tmp.c_str());
    throw;
  }
  ::close(fd);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    ::unlink(tmp.c_str());
    throw IoError("rename to " + path.string() + " failed: " + ec.message());
  }
}

DurableAppender::DurableAppender(const std::filesystem::path& path) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError("cannot open " + path.string() + " for append: " + std::strerror(errno));
}

DurableAppender::~DurableAppender() {
  if (fd_ >= 0) ::close(fd_);
}

void DurableAppender::append(std::string_view line) {
  std::string buffer(line);
  if (buffer.empty() || buffer.back() != '\n') buffer.push_back('\n');
  write_all(fd_, buffer, path_);
  if (::fdatasync(fd_) != 0) throw IoError("fdatasync failed: " + path_.string());
}

}  // namespace laybench::jsonl
