#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "proxycot/error.hpp"
#include "proxycot/text.hpp"

namespace proxycot {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::file_unreadable, path.string(), "cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw Error(Errc::file_unreadable, path.string(), "read failed");
    return ss.str();
}

/// Writes through a sibling temporary and renames, so readers never observe a
/// half-written artifact.
inline void write_file(const std::filesystem::path& path, std::string_view content) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Errc::file_unwritable, path.string(), "cannot open for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error(Errc::file_unwritable, path.string(), "write failed");
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(Errc::file_unwritable, path.string(), ec.message());
}

/// Calls `fn(record, line_number)` for every non-blank line. Syntax errors are
/// reported as MalformedRecord with the 1-based line number as subject.
inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(const json&, std::size_t)>& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::file_unreadable, path.string(), "cannot open for reading");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error(Errc::malformed_record, std::to_string(line_no), path.string() + ": " + e.what());
        }
        fn(record, line_no);
    }
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::vector<json> out;
    for_each_jsonl(path, [&](const json& r, std::size_t) { out.push_back(r); });
    return out;
}

inline std::string to_jsonl(const std::vector<json>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.dump(-1, ' ', false, json::error_handler_t::replace);
        out += '\n';
    }
    return out;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
    write_file(path, to_jsonl(records));
}

/// Typed field access that turns json type errors into MalformedRecord.
template <typename T>
T field(const json& record, const char* key, std::size_t line_no) {
    auto it = record.find(key);
    if (it == record.end())
        throw Error(Errc::malformed_record, std::to_string(line_no), std::string("missing field '") + key + "'");
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        throw Error(Errc::malformed_record, std::to_string(line_no),
                    std::string("field '") + key + "': " + e.what());
    }
}

inline void check_format_version(const json& record, std::size_t line_no) {
    int version = field<int>(record, "format_version", line_no);
    if (version != kFormatVersion)
        throw Error(Errc::unsupported_version, std::to_string(line_no),
                    "format_version " + std::to_string(version) + " (expected " +
                        std::to_string(kFormatVersion) + ")");
}

inline std::string content_hash(std::string_view content) { return text::hex64(text::fnv1a(content)); }

}  // namespace proxycot
