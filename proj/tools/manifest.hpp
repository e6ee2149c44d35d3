#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "grand/error.hpp"

namespace grand::cli {

inline std::string sha1_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
        throw IoError("SHA-1 digest failed");
    }
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", digest[i]);
        hex += buf;
    }
    return hex;
}

/// Same id `git hash-object` prints for the file.
inline std::string blob_hash(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot read " + file.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::string blob = "blob " + std::to_string(content.size());
    blob.push_back('\0');
    return sha1_hex(blob + content);
}

/// Hash over "<name> <blob hash>\n" lines of every regular file, sorted by
/// path; a directory hashes its files relative to itself.
inline std::string inputs_hash(const std::vector<std::filesystem::path>& inputs) {
    namespace fs = std::filesystem;
    std::vector<std::pair<std::string, std::string>> entries;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            for (const auto& e : fs::recursive_directory_iterator(in)) {
                if (e.is_regular_file()) {
                    entries.emplace_back(fs::relative(e.path(), in).generic_string(), blob_hash(e.path()));
                }
            }
        } else if (fs::is_regular_file(in)) {
            entries.emplace_back(in.filename().generic_string(), blob_hash(in));
        }
    }
    std::sort(entries.begin(), entries.end());
    std::string listing;
    for (const auto& [name, h] : entries) listing += name + ' ' + h + '\n';
    return sha1_hex(listing);
}

struct RunManifest {
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;
    std::string input_hash;
    double wall_clock_seconds = 0.0;
    std::vector<std::string> outputs;
    int exit_code = 0;
    std::string error;

    nlohmann::json to_json() const {
        nlohmann::json j{{"command", command},   {"config", config},
                         {"seed", seed},         {"input_hash", input_hash},
                         {"wall_clock_seconds", wall_clock_seconds},
                         {"outputs", outputs},   {"exit_code", exit_code}};
        if (!error.empty()) j["error"] = error;
        return j;
    }

    void write(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        std::ofstream out(dir / "manifest.json");
        if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
        out << to_json().dump(2) << '\n';
    }
};

}  // namespace grand::cli
