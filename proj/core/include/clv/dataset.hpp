#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clv/scene.hpp"
#include "clv/vocab.hpp"

namespace clv {

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// binary P6 / P5, maxval 255
void write_ppm(const std::filesystem::path& path, int64_t w, int64_t h, const std::vector<uint8_t>& rgb);
std::vector<uint8_t> read_ppm(const std::filesystem::path& path, int64_t& w, int64_t& h);
void write_pgm(const std::filesystem::path& path, int64_t w, int64_t h, const std::vector<uint8_t>& gray);
std::vector<uint8_t> read_pgm(const std::filesystem::path& path, int64_t& w, int64_t& h);

std::string scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const std::string& text);
SceneSpec load_scene_spec(const std::filesystem::path& path);

struct Dataset {
    SceneSpec spec;
    Vocabulary vocab;
    std::vector<SampleRecord> records;
};

// Layout: manifest.json, vocab.json, image_{i}.ppm, mask_{i}_{k}.pgm,
// sample_{i}.json. Masks use 255 = foreground.
void write_dataset(const std::vector<SampleRecord>& records, const SceneSpec& spec, const Vocabulary& vocab,
                   const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

std::string sample_to_json(const SampleRecord& rec);
SampleRecord sample_from_json(const std::string& text, const std::string& context);

} // namespace clv
