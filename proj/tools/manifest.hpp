#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace epigp::cli {

std::string sha256_file(const std::filesystem::path& file);

// Writes via a temporary sibling and rename, so readers never see a partial file.
void write_atomic(const std::filesystem::path& file, const std::string& contents);

/// Reproducibility record written next to a command's outputs.
class Manifest {
public:
    Manifest(std::string command, std::vector<std::string> args);

    void set_config(nlohmann::json config) { config_ = std::move(config); }
    void set_seed(std::uint64_t seed) { seed_ = seed; }
    void add_input(const std::filesystem::path& file);
    void add_output(const std::filesystem::path& file);
    void set_result(const std::string& key, nlohmann::json value) { result_[key] = std::move(value); }

    void write(const std::filesystem::path& file) const;

private:
    std::string command_;
    std::vector<std::string> args_;
    nlohmann::json config_;
    std::optional<std::uint64_t> seed_;
    nlohmann::json inputs_ = nlohmann::json::object();
    nlohmann::json outputs_ = nlohmann::json::object();
    nlohmann::json result_ = nlohmann::json::object();
    std::chrono::system_clock::time_point started_;
    std::chrono::steady_clock::time_point start_mono_;
};

} // namespace epigp::cli
