#include "clv/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace clv {

namespace {

const char* kClassNames[kNumClasses] = {"house", "car", "boat", "tree", "road", "water", "sports_field"};
const char* kPredicateNames[6] = {"left_of", "right_of", "above", "below", "near", "between"};

struct Rgb {
    uint8_t r, g, b;
};

constexpr Rgb kGrass{90, 160, 70};
constexpr Rgb kRoad{120, 120, 120};
constexpr Rgb kWater{50, 90, 200};
constexpr Rgb kField{210, 160, 60};
constexpr Rgb kHouse{200, 60, 50};
constexpr Rgb kTree{30, 110, 40};
constexpr Rgb kCar{60, 60, 70};
constexpr Rgb kBoat{140, 90, 40};
constexpr Rgb kAmbiguous{240, 240, 240}; // shared car/boat sprite at high confusion

constexpr int kPlacementRetries = 200;

bool disk_hit(int64_t dx, int64_t dy, int64_t r) { return dx * dx + dy * dy <= r * r; }

} // namespace

const char* class_name(SceneClass c) { return kClassNames[static_cast<int>(c)]; }

SceneClass class_from_name(const std::string& name) {
    for (int i = 0; i < kNumClasses; ++i)
        if (name == kClassNames[i]) return static_cast<SceneClass>(i);
    throw std::out_of_range("unknown scene class: " + name);
}

const char* predicate_name(Predicate p) { return kPredicateNames[static_cast<int>(p)]; }

Predicate predicate_from_name(const std::string& name) {
    for (int i = 0; i < 6; ++i)
        if (name == kPredicateNames[i]) return static_cast<Predicate>(i);
    throw std::out_of_range("unknown predicate: " + name);
}

void DetectorNoise::validate() const {
    if (jitter_sigma < 0.0) throw std::invalid_argument("detector noise: jitter_sigma must be non-negative");
    if (false_positive_rate < 0.0 || false_positive_rate > 1.0)
        throw std::invalid_argument("detector noise: false_positive_rate must lie in [0,1]");
    if (false_negative_rate < 0.0 || false_negative_rate > 1.0)
        throw std::invalid_argument("detector noise: false_negative_rate must lie in [0,1]");
}

SceneSpec::SceneSpec() {
    classes.assign(kClassNames, kClassNames + kNumClasses);
}

void SceneSpec::validate() const {
    if (image_size < 32 || image_size % 8 != 0)
        throw std::invalid_argument("scene spec: image_size must be a multiple of 8 and at least 32");
    if (object_count_min < 1 || object_count_max < object_count_min)
        throw std::invalid_argument("scene spec: object_count range must satisfy 1 <= min <= max");
    if (confusion_level < 0.0 || confusion_level > 1.0)
        throw std::invalid_argument("scene spec: confusion_level must lie in [0,1]");
    if (relation_margin <= 0.0) throw std::invalid_argument("scene spec: relation_margin must be positive");
    std::vector<std::string> expected(kClassNames, kClassNames + kNumClasses);
    if (classes != expected)
        throw std::invalid_argument("scene spec: unsupported class palette");
    detector.validate();
}

std::vector<int> in_prompt_instances(const std::vector<Instance>& instances, const Box& prompt) {
    std::vector<int> out;
    for (size_t i = 0; i < instances.size(); ++i)
        if (prompt.contains(instances[i].box)) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<Relation> derive_relations(const std::vector<Instance>& instances, double margin) {
    if (instances.empty()) throw std::invalid_argument("derive_relations: need at least one instance");
    const int n = static_cast<int>(instances.size());
    std::vector<Relation> rels;
    auto cx = [&](int i) { return instances[static_cast<size_t>(i)].box.center_x(); };
    auto cy = [&](int i) { return instances[static_cast<size_t>(i)].box.center_y(); };
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            if (cx(i) + margin < cx(j)) rels.push_back({i, Predicate::left_of, j, -1});
            if (cx(j) + margin < cx(i)) rels.push_back({i, Predicate::right_of, j, -1});
            if (cy(i) + margin < cy(j)) rels.push_back({i, Predicate::above, j, -1});
            if (cy(j) + margin < cy(i)) rels.push_back({i, Predicate::below, j, -1});
            const double dx = cx(i) - cx(j), dy = cy(i) - cy(j);
            if (std::sqrt(dx * dx + dy * dy) < 2.0 * margin) rels.push_back({i, Predicate::near, j, -1});
        }
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) {
                if (i == j || i == k || j == k) continue;
                const bool left_ji = cx(j) + margin < cx(i);
                const bool left_ik = cx(i) + margin < cx(k);
                const bool level = std::abs(cy(i) - cy(j)) < margin && std::abs(cy(i) - cy(k)) < margin;
                if (left_ji && left_ik && level) rels.push_back({i, Predicate::between, j, k});
            }
    std::sort(rels.begin(), rels.end(), [](const Relation& a, const Relation& b) {
        if (a.subject != b.subject) return a.subject < b.subject;
        if (a.pred != b.pred) return static_cast<int>(a.pred) < static_cast<int>(b.pred);
        if (a.object != b.object) return a.object < b.object;
        return a.object2 < b.object2;
    });
    return rels;
}

Caption compose_caption(const std::vector<Instance>& instances,
                        const std::vector<Relation>& relations,
                        const Box& prompt_box,
                        const Vocabulary& vocab) {
    for (const auto& inst : instances)
        if (!vocab.contains(class_name(inst.cls)))
            throw std::out_of_range(std::string("compose_caption: class word missing from vocabulary: ") + class_name(inst.cls));

    Caption cap;
    auto push = [&](const std::string& tok) { cap.tokens.push_back(vocab.id(tok)); };

    cap.tokens.push_back(vocab.bos());

    // global summary: instance counts by class, class-palette order
    std::array<int, kNumClasses> counts{};
    for (const auto& inst : instances) counts[static_cast<size_t>(inst.cls)]++;
    push("scene");
    push("has");
    for (int c = 0; c < kNumClasses; ++c) {
        if (counts[static_cast<size_t>(c)] == 0) continue;
        push(std::to_string(std::min(counts[static_cast<size_t>(c)], 9)));
        push(kClassNames[c]);
    }
    push(".");

    // one sentence per in-prompt instance, in instance-index order
    const std::vector<int> targets = in_prompt_instances(instances, prompt_box);
    std::vector<bool> in_set(instances.size(), false);
    for (int t : targets) in_set[static_cast<size_t>(t)] = true;

    for (int t : targets) {
        cap.tokens.push_back(vocab.p_open());
        const int64_t begin = static_cast<int64_t>(cap.tokens.size());
        push(class_name(instances[static_cast<size_t>(t)].cls));
        const int64_t end = static_cast<int64_t>(cap.tokens.size());
        cap.tokens.push_back(vocab.p_close());
        cap.spans.push_back({begin, end, t});

        // first relation with this subject, preferring in-prompt objects
        const Relation* chosen = nullptr;
        for (const auto& r : relations) {
            if (r.subject != t) continue;
            const bool inside = in_set[static_cast<size_t>(r.object)] &&
                                (r.object2 < 0 || in_set[static_cast<size_t>(r.object2)]);
            if (inside) {
                chosen = &r;
                break;
            }
            if (!chosen) chosen = &r;
        }
        if (chosen) {
            push(predicate_name(chosen->pred));
            push(class_name(instances[static_cast<size_t>(chosen->object)].cls));
            if (chosen->pred == Predicate::between) {
                push("and");
                push(class_name(instances[static_cast<size_t>(chosen->object2)].cls));
            }
        } else {
            push("here");
        }
        push(".");
    }

    cap.tokens.push_back(vocab.eos());
    return cap;
}

std::vector<Box> simulate_detector(const std::vector<Instance>& instances,
                                   const Box& prompt_box,
                                   const DetectorNoise& noise,
                                   uint64_t seed) {
    noise.validate();
    Rng rng(seed);
    const std::vector<int> targets = in_prompt_instances(instances, prompt_box);
    const int64_t k_true = static_cast<int64_t>(targets.size());

    auto clamp_coord = [](int64_t v, int64_t lo, int64_t hi) { return std::min(std::max(v, lo), hi); };

    std::vector<Box> out;
    for (int t : targets) {
        if (rng.uniform() < noise.false_negative_rate) continue;
        Box b = instances[static_cast<size_t>(t)].box;
        if (noise.jitter_sigma > 0.0) {
            b.x0 += llround(rng.gaussian(0.0, noise.jitter_sigma));
            b.y0 += llround(rng.gaussian(0.0, noise.jitter_sigma));
            b.x1 += llround(rng.gaussian(0.0, noise.jitter_sigma));
            b.y1 += llround(rng.gaussian(0.0, noise.jitter_sigma));
        }
        b.x0 = clamp_coord(b.x0, prompt_box.x0, prompt_box.x1 - 1);
        b.y0 = clamp_coord(b.y0, prompt_box.y0, prompt_box.y1 - 1);
        b.x1 = clamp_coord(b.x1, prompt_box.x0 + 1, prompt_box.x1);
        b.y1 = clamp_coord(b.y1, prompt_box.y0 + 1, prompt_box.y1);
        if (b.x1 <= b.x0) {
            b.x0 = std::max(prompt_box.x0, b.x1 - 1);
            b.x1 = b.x0 + 1;
        }
        if (b.y1 <= b.y0) {
            b.y0 = std::max(prompt_box.y0, b.y1 - 1);
            b.y1 = b.y0 + 1;
        }
        out.push_back(b);
    }

    const int64_t n_fp = rng.poisson(noise.false_positive_rate * static_cast<double>(k_true));
    for (int64_t i = 0; i < n_fp; ++i) {
        const int64_t pw = prompt_box.width(), ph = prompt_box.height();
        const int64_t w = rng.uniform_int(1, std::min<int64_t>(10, pw));
        const int64_t h = rng.uniform_int(1, std::min<int64_t>(10, ph));
        const int64_t x0 = rng.uniform_int(prompt_box.x0, prompt_box.x1 - w);
        const int64_t y0 = rng.uniform_int(prompt_box.y0, prompt_box.y1 - h);
        out.push_back({x0, y0, x0 + w, y0 + h});
    }

    rng.shuffle(out);
    return out;
}

namespace {

struct Painter {
    int64_t size;
    std::vector<uint8_t>& img;

    void fill_rect(const Box& b, Rgb c, std::vector<uint8_t>* mask) const {
        for (int64_t y = b.y0; y < b.y1; ++y)
            for (int64_t x = b.x0; x < b.x1; ++x) {
                const size_t p = static_cast<size_t>(y * size + x);
                img[3 * p] = c.r;
                img[3 * p + 1] = c.g;
                img[3 * p + 2] = c.b;
                if (mask) (*mask)[p] = 1;
            }
    }

    void fill_disk(const Box& b, Rgb c, std::vector<uint8_t>* mask) const {
        const int64_t r = b.width() / 2;
        const int64_t cx = b.x0 + r, cy = b.y0 + r;
        for (int64_t y = b.y0; y < b.y1; ++y)
            for (int64_t x = b.x0; x < b.x1; ++x) {
                if (!disk_hit(x - cx, y - cy, r)) continue;
                const size_t p = static_cast<size_t>(y * size + x);
                img[3 * p] = c.r;
                img[3 * p + 1] = c.g;
                img[3 * p + 2] = c.b;
                if (mask) (*mask)[p] = 1;
            }
    }
};

} // namespace

SampleRecord generate_scene(const SceneSpec& spec, uint64_t seed, const Vocabulary& vocab) {
    spec.validate();
    Rng rng(seed);
    const int64_t S = spec.image_size;
    const size_t npix = static_cast<size_t>(S * S);

    SampleRecord rec;
    rec.image_size = S;
    rec.image.assign(npix * 3, 0);
    rec.vocab_hash = vocab.hash();

    Painter paint{S, rec.image};
    paint.fill_rect({0, 0, S, S}, kGrass, nullptr);

    auto new_instance = [&](SceneClass cls, Box b, int anchor) {
        Instance inst;
        inst.cls = cls;
        inst.box = b;
        inst.anchor = anchor;
        inst.mask.assign(npix, 0);
        rec.instances.push_back(std::move(inst));
        return static_cast<int>(rec.instances.size()) - 1;
    };

    // --- context regions: one road stripe, one water rect, sometimes a field
    const int64_t road_h = 6;
    const int64_t road_y = rng.uniform_int(6, S - 22);
    const Box road_box{0, road_y, S, road_y + road_h};
    const int road_idx = new_instance(SceneClass::road, road_box, -1);
    paint.fill_rect(road_box, kRoad, &rec.instances[static_cast<size_t>(road_idx)].mask);

    Box water_box;
    {
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
            const int64_t w = rng.uniform_int(18, 26), h = rng.uniform_int(14, 20);
            const int64_t x0 = rng.uniform_int(0, S - w), y0 = rng.uniform_int(0, S - h);
            const Box cand{x0, y0, x0 + w, y0 + h};
            if (cand.intersects(road_box)) continue;
            water_box = cand;
            placed = true;
        }
        if (!placed)
            throw GenerationError("generate_scene: failed to place water region (seed " + std::to_string(seed) + ")");
    }
    const int water_idx = new_instance(SceneClass::water, water_box, -1);
    paint.fill_rect(water_box, kWater, &rec.instances[static_cast<size_t>(water_idx)].mask);

    std::vector<Box> blockers = {road_box, water_box};
    if (rng.uniform() < 0.5) {
        for (int attempt = 0; attempt < kPlacementRetries; ++attempt) {
            const int64_t w = 14, h = 10;
            const int64_t x0 = rng.uniform_int(0, S - w), y0 = rng.uniform_int(0, S - h);
            const Box cand{x0, y0, x0 + w, y0 + h};
            bool clash = false;
            for (const Box& b : blockers) clash = clash || cand.intersects(b);
            if (clash) continue;
            const int idx = new_instance(SceneClass::sports_field, cand, -1);
            paint.fill_rect(cand, kField, &rec.instances[static_cast<size_t>(idx)].mask);
            blockers.push_back(cand);
            break;
        }
    }

    // --- movable objects; cars live on the road, boats on water
    const int64_t n_objects = rng.uniform_int(spec.object_count_min, spec.object_count_max);
    std::vector<Box> object_boxes;
    std::vector<int> movable; // instance indices
    auto overlaps_any = [](const Box& b, const std::vector<Box>& list, int64_t gap) {
        const Box grown{b.x0 - gap, b.y0 - gap, b.x1 + gap, b.y1 + gap};
        for (const Box& o : list)
            if (grown.intersects(o)) return true;
        return false;
    };

    for (int64_t i = 0; i < n_objects; ++i) {
        const int cls_draw = static_cast<int>(rng.uniform_int(0, 3)); // house, car, boat, tree
        const SceneClass cls = static_cast<SceneClass>(cls_draw);
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
            Box cand;
            int anchor = -1;
            switch (cls) {
                case SceneClass::house: {
                    const int64_t x0 = rng.uniform_int(0, S - 8), y0 = rng.uniform_int(0, S - 8);
                    cand = {x0, y0, x0 + 8, y0 + 8};
                    break;
                }
                case SceneClass::tree: {
                    const int64_t x0 = rng.uniform_int(0, S - 7), y0 = rng.uniform_int(0, S - 7);
                    cand = {x0, y0, x0 + 7, y0 + 7};
                    break;
                }
                case SceneClass::car: {
                    const int64_t x0 = rng.uniform_int(0, S - 6);
                    cand = {x0, road_box.y0 + 1, x0 + 6, road_box.y0 + 5};
                    anchor = road_idx;
                    break;
                }
                case SceneClass::boat: {
                    if (water_box.width() < 8 || water_box.height() < 6) break;
                    const int64_t x0 = rng.uniform_int(water_box.x0 + 1, water_box.x1 - 7);
                    const int64_t y0 = rng.uniform_int(water_box.y0 + 1, water_box.y1 - 5);
                    cand = {x0, y0, x0 + 6, y0 + 4};
                    anchor = water_idx;
                    break;
                }
                default:
                    break;
            }
            if (cand.area() == 0) continue;
            if (!cand.valid(S, S)) continue;
            if (overlaps_any(cand, object_boxes, 1)) continue;
            if (cls == SceneClass::house || cls == SceneClass::tree) {
                if (overlaps_any(cand, blockers, 0)) continue;
            }
            const int idx = new_instance(cls, cand, anchor);
            Instance& inst = rec.instances[static_cast<size_t>(idx)];
            Rgb color{};
            switch (cls) {
                case SceneClass::house:
                    color = kHouse;
                    break;
                case SceneClass::tree:
                    color = kTree;
                    break;
                case SceneClass::car:
                    color = rng.uniform() < spec.confusion_level ? kAmbiguous : kCar;
                    break;
                case SceneClass::boat:
                    color = rng.uniform() < spec.confusion_level ? kAmbiguous : kBoat;
                    break;
                default:
                    break;
            }
            if (cls == SceneClass::tree)
                paint.fill_disk(cand, color, &inst.mask);
            else
                paint.fill_rect(cand, color, &inst.mask);
            // the object occludes its anchor region
            if (anchor >= 0) {
                auto& region_mask = rec.instances[static_cast<size_t>(anchor)].mask;
                for (size_t p = 0; p < npix; ++p)
                    if (inst.mask[p]) region_mask[p] = 0;
            }
            object_boxes.push_back(cand);
            movable.push_back(idx);
            placed = true;
        }
        if (!placed)
            throw GenerationError("generate_scene: object placement failed after retries (seed " +
                                  std::to_string(seed) + ")");
    }

    // --- prompt box around 1..3 movable objects
    {
        std::vector<int> pool = movable;
        rng.shuffle(pool);
        const int64_t want = rng.uniform_int(1, std::min<int64_t>(3, static_cast<int64_t>(pool.size())));
        Box pb = rec.instances[static_cast<size_t>(pool[0])].box;
        for (int64_t i = 1; i < want; ++i) {
            const Box& b = rec.instances[static_cast<size_t>(pool[static_cast<size_t>(i)])].box;
            pb.x0 = std::min(pb.x0, b.x0);
            pb.y0 = std::min(pb.y0, b.y0);
            pb.x1 = std::max(pb.x1, b.x1);
            pb.y1 = std::max(pb.y1, b.y1);
        }
        const int64_t pad = rng.uniform_int(2, 4);
        pb.x0 = std::max<int64_t>(0, pb.x0 - pad);
        pb.y0 = std::max<int64_t>(0, pb.y0 - pad);
        pb.x1 = std::min<int64_t>(S, pb.x1 + pad);
        pb.y1 = std::min<int64_t>(S, pb.y1 + pad);
        rec.prompt_box = pb;
    }

    rec.in_prompt = in_prompt_instances(rec.instances, rec.prompt_box);
    rec.relations = derive_relations(rec.instances, spec.relation_margin);

    const Caption cap = compose_caption(rec.instances, rec.relations, rec.prompt_box, vocab);
    rec.caption = cap.tokens;
    rec.spans = cap.spans;

    rec.proposals = simulate_detector(rec.instances, rec.prompt_box, spec.detector, rng.next_u64());
    return rec;
}

} // namespace clv
