#pragma once

// Thin POSIX helpers shared by the file-backed modules.

#include <cstdint>
#include <filesystem>
#include <string>

namespace evidx::detail {

// Full-length pread/pwrite; throw kIo (or kTruncated for a short read).
void pread_all(int fd, void* dst, std::size_t n, std::uint64_t offset,
               const std::string& what);
void pwrite_all(int fd, const void* src, std::size_t n, std::uint64_t offset,
                const std::string& what);
void write_all(int fd, const void* src, std::size_t n, const std::string& what);

std::uint64_t fd_size(int fd, const std::string& what);

// Writes text to path via a temporary file and rename(2).
void atomic_write_text(const std::filesystem::path& path, const std::string& text);

std::string read_text_file(const std::filesystem::path& path);

std::string errno_text(int err);

}  // namespace evidx::detail
