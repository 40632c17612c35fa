#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clv/rng.hpp"
#include "clv/vocab.hpp"

namespace clv {

enum class SceneClass : int { house = 0, car, boat, tree, road, water, sports_field };
constexpr int kNumClasses = 7;
const char* class_name(SceneClass c);
SceneClass class_from_name(const std::string& name);

// half-open integer pixel box
struct Box {
    int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int64_t width() const { return x1 - x0; }
    int64_t height() const { return y1 - y0; }
    int64_t area() const { return width() * height(); }
    double center_x() const { return 0.5 * static_cast<double>(x0 + x1); }
    double center_y() const { return 0.5 * static_cast<double>(y0 + y1); }
    bool valid(int64_t w, int64_t h) const { return 0 <= x0 && x0 < x1 && x1 <= w && 0 <= y0 && y0 < y1 && y1 <= h; }
    bool contains(const Box& o) const { return x0 <= o.x0 && o.x1 <= x1 && y0 <= o.y0 && o.y1 <= y1; }
    bool intersects(const Box& o) const { return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1; }

    bool operator==(const Box&) const = default;
};

struct DetectorNoise {
    double jitter_sigma = 1.0;
    double false_positive_rate = 0.1;
    double false_negative_rate = 0.05;

    void validate() const;
};

struct SceneSpec {
    int64_t image_size = 64;
    std::vector<std::string> classes; // fixed palette; validated against the supported one
    int64_t object_count_min = 3;     // movable objects (house/car/boat/tree); context
    int64_t object_count_max = 6;     // regions are placed in addition
    double confusion_level = 0.0;     // fraction of car/boat instances drawn with the shared ambiguous sprite
    double relation_margin = 6.0;     // pixels
    uint64_t seed = 0;
    DetectorNoise detector;

    SceneSpec();
    void validate() const;
};

struct Instance {
    SceneClass cls;
    Box box;
    std::vector<uint8_t> mask; // H*W, 1 = visible foreground of this instance
    int anchor = -1;           // index of the road/water instance it sits on, -1 otherwise
};

enum class Predicate : int { left_of = 0, right_of, above, below, near, between };
const char* predicate_name(Predicate p);
Predicate predicate_from_name(const std::string& name);

struct Relation {
    int subject = -1;
    Predicate pred = Predicate::left_of;
    int object = -1;
    int object2 = -1; // second object, `between` only

    bool operator==(const Relation&) const = default;
};

// token index range [begin, end) of the phrase words; caption[end] is </p>
struct PhraseSpan {
    int64_t begin = 0;
    int64_t end = 0;
    int instance = -1;

    bool operator==(const PhraseSpan&) const = default;
};

struct SampleRecord {
    int64_t image_size = 0;
    std::vector<uint8_t> image; // H*W*3 interleaved RGB
    std::vector<Instance> instances;
    std::vector<Relation> relations;
    Box prompt_box;
    std::vector<int> in_prompt;     // instance indices fully inside prompt_box, ascending
    std::vector<int64_t> caption;   // token ids, <bos> ... <eos>
    std::vector<PhraseSpan> spans;  // aligned with in_prompt order
    std::vector<Box> proposals;     // simulated detector output
    uint64_t vocab_hash = 0;
};

struct Caption {
    std::vector<int64_t> tokens;
    std::vector<PhraseSpan> spans;
};

// thrown when placement cannot satisfy constraints within bounded retries
struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& what) : std::runtime_error(what) {}
};

std::vector<int> in_prompt_instances(const std::vector<Instance>& instances, const Box& prompt);

std::vector<Relation> derive_relations(const std::vector<Instance>& instances, double margin);

Caption compose_caption(const std::vector<Instance>& instances,
                        const std::vector<Relation>& relations,
                        const Box& prompt_box,
                        const Vocabulary& vocab);

std::vector<Box> simulate_detector(const std::vector<Instance>& instances,
                                   const Box& prompt_box,
                                   const DetectorNoise& noise,
                                   uint64_t seed);

SampleRecord generate_scene(const SceneSpec& spec, uint64_t seed, const Vocabulary& vocab);

} // namespace clv
