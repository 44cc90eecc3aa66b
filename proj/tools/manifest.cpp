#include "manifest.hpp"

#include <array>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <memory>

#include <openssl/evp.h>

#include "epigp/errors.hpp"

#ifndef EPIGP_VERSION
#define EPIGP_VERSION "0.0.0"
#endif

namespace epigp::cli {

std::string sha256_file(const std::filesystem::path& file)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw InputError("cannot read " + file.string());
    }
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
    std::array<char, 1 << 16> buf;
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) {
            EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
        }
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md;
    unsigned len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    std::string hex;
    char byte[3];
    for (unsigned i = 0; i < len; ++i) {
        std::snprintf(byte, sizeof byte, "%02x", md[i]);
        hex += byte;
    }
    return hex;
}

void write_atomic(const std::filesystem::path& file, const std::string& contents)
{
    std::filesystem::path tmp = file;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw InputError("cannot write " + tmp.string());
        }
        out << contents;
        out.flush();
        if (!out) {
            throw InputError("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, file);
}

Manifest::Manifest(std::string command, std::vector<std::string> args)
    : command_(std::move(command)), args_(std::move(args)), started_(std::chrono::system_clock::now()),
      start_mono_(std::chrono::steady_clock::now())
{
}

void Manifest::add_input(const std::filesystem::path& file)
{
    inputs_[file.string()] = {{"sha256", sha256_file(file)}};
}

void Manifest::add_output(const std::filesystem::path& file)
{
    outputs_[file.string()] = {{"sha256", sha256_file(file)}};
}

void Manifest::write(const std::filesystem::path& file) const
{
    std::time_t t = std::chrono::system_clock::to_time_t(started_);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_mono_).count();

    nlohmann::json j{{"command", command_},
                     {"args", args_},
                     {"version", EPIGP_VERSION},
                     {"config", config_},
                     {"seed", seed_ ? nlohmann::json(*seed_) : nlohmann::json(nullptr)},
                     {"inputs", inputs_},
                     {"outputs", outputs_},
                     {"result", result_},
                     {"wall_clock", {{"started_utc", stamp}, {"elapsed_seconds", elapsed}}}};
    write_atomic(file, j.dump(2) + "\n");
}

} // namespace epigp::cli
