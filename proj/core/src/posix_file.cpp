#include "posix_file.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "evidx/error.hpp"

namespace evidx::detail {

std::string errno_text(int err) { return std::strerror(err); }

void pread_all(int fd, void* dst, std::size_t n, std::uint64_t offset,
               const std::string& what) {
  auto* p = static_cast<char*>(dst);
  while (n > 0) {
    ssize_t got = ::pread(fd, p, n, static_cast<off_t>(offset));
    if (got < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::kIo, what + ": " + errno_text(errno));
    }
    if (got == 0) throw Error(Errc::kTruncated, what + ": unexpected end of file");
    p += got;
    n -= static_cast<std::size_t>(got);
    offset += static_cast<std::uint64_t>(got);
  }
}

void pwrite_all(int fd, const void* src, std::size_t n, std::uint64_t offset,
                const std::string& what) {
  const auto* p = static_cast<const char*>(src);
  while (n > 0) {
    ssize_t put = ::pwrite(fd, p, n, static_cast<off_t>(offset));
    if (put < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::kIo, what + ": " + errno_text(errno));
    }
    p += put;
    n -= static_cast<std::size_t>(put);
    offset += static_cast<std::uint64_t>(put);
  }
}

void write_all(int fd, const void* src, std::size_t n, const std::string& what) {
  const auto* p = static_cast<const char*>(src);
  while (n > 0) {
    ssize_t put = ::write(fd, p, n);
    if (put < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::kIo, what + ": " + errno_text(errno));
    }
    p += put;
    n -= static_cast<std::size_t>(put);
  }
}

std::uint64_t fd_size(int fd, const std::string& what) {
  struct stat st {};
  if (::fstat(fd, &st) != 0) throw Error(Errc::kIo, what + ": " + errno_text(errno));
  return static_cast<std::uint64_t>(st.st_size);
}

void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error(Errc::kIo, tmp.string() + ": " + errno_text(errno));
  try {
    write_all(fd, text.data(), text.size(), tmp.string());
    if (::fsync(fd) != 0) throw Error(Errc::kIo, tmp.string() + ": fsync failed");
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    throw Error(Errc::kIo, "rename to " + path.string() + ": " + errno_text(errno));
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kNotFound, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace evidx::detail
