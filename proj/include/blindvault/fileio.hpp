#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "blindvault/bytes.hpp"

namespace blindvault {

/// Replaces `path` with `data` through a temp file and rename(2). With
/// `durable` the temp file is fsynced before the rename and the directory
/// after it.
void write_file_atomic(const std::filesystem::path& path, ByteView data, bool durable = true,
                       unsigned mode = 0600);

/// Throws Error(Io) if the file cannot be read.
Bytes read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace blindvault
