#include "clv/dataset.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace clv {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// reads "P6\n<w> <h>\n255\n" style headers with arbitrary whitespace
size_t parse_pnm_header(const std::string& buf, const fs::path& path, const char* magic, int64_t& w, int64_t& h) {
    size_t pos = 0;
    auto fail = [&](const std::string& why) {
        throw ParseError("malformed " + std::string(magic) + " file " + path.string() + " at byte " + std::to_string(pos) + ": " + why);
    };
    if (buf.size() < 2 || buf[0] != magic[0] || buf[1] != magic[1]) fail("bad magic");
    pos = 2;
    auto next_int = [&]() -> int64_t {
        while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
        if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos]))) fail("expected integer");
        int64_t v = 0;
        while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
            v = v * 10 + (buf[pos] - '0');
            ++pos;
        }
        return v;
    };
    w = next_int();
    h = next_int();
    const int64_t maxval = next_int();
    if (maxval != 255) fail("maxval must be 255");
    if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos]))) fail("expected single whitespace after maxval");
    ++pos;
    return pos;
}

json box_to_json(const Box& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

Box box_from_json(const json& j, const std::string& ctx) {
    if (!j.is_array() || j.size() != 4) throw ParseError(ctx + ": box must be a 4-element array");
    return Box{j[0].get<int64_t>(), j[1].get<int64_t>(), j[2].get<int64_t>(), j[3].get<int64_t>()};
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) throw ParseError(ctx + ": unknown key '" + it.key() + "'");
}

} // namespace

void write_ppm(const fs::path& path, int64_t w, int64_t h, const std::vector<uint8_t>& rgb) {
    if (static_cast<int64_t>(rgb.size()) != w * h * 3)
        throw std::invalid_argument("write_ppm: buffer size does not match " + std::to_string(w) + "x" + std::to_string(h));
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
    write_file(path, out);
}

std::vector<uint8_t> read_ppm(const fs::path& path, int64_t& w, int64_t& h) {
    const std::string buf = read_file(path);
    const size_t off = parse_pnm_header(buf, path, "P6", w, h);
    const size_t need = static_cast<size_t>(w * h * 3);
    if (buf.size() - off < need)
        throw ParseError("truncated P6 file " + path.string() + " at byte " + std::to_string(buf.size()) +
                         ": need " + std::to_string(off + need) + " bytes");
    std::vector<uint8_t> px(need);
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(off), buf.begin() + static_cast<std::ptrdiff_t>(off + need), px.begin());
    return px;
}

void write_pgm(const fs::path& path, int64_t w, int64_t h, const std::vector<uint8_t>& gray) {
    if (static_cast<int64_t>(gray.size()) != w * h)
        throw std::invalid_argument("write_pgm: buffer size does not match " + std::to_string(w) + "x" + std::to_string(h));
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.append(reinterpret_cast<const char*>(gray.data()), gray.size());
    write_file(path, out);
}

std::vector<uint8_t> read_pgm(const fs::path& path, int64_t& w, int64_t& h) {
    const std::string buf = read_file(path);
    const size_t off = parse_pnm_header(buf, path, "P5", w, h);
    const size_t need = static_cast<size_t>(w * h);
    if (buf.size() - off < need)
        throw ParseError("truncated P5 file " + path.string() + " at byte " + std::to_string(buf.size()) +
                         ": need " + std::to_string(off + need) + " bytes");
    std::vector<uint8_t> px(need);
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(off), buf.begin() + static_cast<std::ptrdiff_t>(off + need), px.begin());
    return px;
}

std::string scene_spec_to_json(const SceneSpec& spec) {
    json j;
    j["image_size"] = spec.image_size;
    j["classes"] = spec.classes;
    j["object_count"] = json::array({spec.object_count_min, spec.object_count_max});
    j["confusion_level"] = spec.confusion_level;
    j["relation_margin"] = spec.relation_margin;
    j["seed"] = spec.seed;
    j["detector"] = {{"jitter_sigma", spec.detector.jitter_sigma},
                     {"false_positive_rate", spec.detector.false_positive_rate},
                     {"false_negative_rate", spec.detector.false_negative_rate}};
    return j.dump(2) + "\n";
}

SceneSpec scene_spec_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("scene spec: invalid JSON: ") + e.what());
    }
    reject_unknown_keys(j, {"image_size", "classes", "object_count", "confusion_level", "relation_margin", "seed", "detector"},
                        "scene spec");
    SceneSpec spec;
    if (j.count("image_size")) spec.image_size = j["image_size"].get<int64_t>();
    if (j.count("classes")) spec.classes = j["classes"].get<std::vector<std::string>>();
    if (j.count("object_count")) {
        const auto& oc = j["object_count"];
        if (!oc.is_array() || oc.size() != 2) throw ParseError("scene spec: object_count must be [min, max]");
        spec.object_count_min = oc[0].get<int64_t>();
        spec.object_count_max = oc[1].get<int64_t>();
    }
    if (j.count("confusion_level")) spec.confusion_level = j["confusion_level"].get<double>();
    if (j.count("relation_margin")) spec.relation_margin = j["relation_margin"].get<double>();
    if (j.count("seed")) spec.seed = j["seed"].get<uint64_t>();
    if (j.count("detector")) {
        const auto& d = j["detector"];
        reject_unknown_keys(d, {"jitter_sigma", "false_positive_rate", "false_negative_rate"}, "scene spec detector");
        if (d.count("jitter_sigma")) spec.detector.jitter_sigma = d["jitter_sigma"].get<double>();
        if (d.count("false_positive_rate")) spec.detector.false_positive_rate = d["false_positive_rate"].get<double>();
        if (d.count("false_negative_rate")) spec.detector.false_negative_rate = d["false_negative_rate"].get<double>();
    }
    spec.validate();
    return spec;
}

SceneSpec load_scene_spec(const fs::path& path) { return scene_spec_from_json(read_file(path)); }

std::string sample_to_json(const SampleRecord& rec) {
    json j;
    j["image_size"] = rec.image_size;
    json insts = json::array();
    for (const auto& inst : rec.instances) {
        json ji;
        ji["class"] = class_name(inst.cls);
        ji["box"] = box_to_json(inst.box);
        ji["anchor"] = inst.anchor;
        insts.push_back(std::move(ji));
    }
    j["instances"] = std::move(insts);
    json rels = json::array();
    for (const auto& r : rec.relations) {
        json jr = json::array({r.subject, predicate_name(r.pred), r.object});
        if (r.pred == Predicate::between) jr.push_back(r.object2);
        rels.push_back(std::move(jr));
    }
    j["relations"] = std::move(rels);
    j["prompt_box"] = box_to_json(rec.prompt_box);
    j["in_prompt"] = rec.in_prompt;
    j["caption"] = rec.caption;
    json spans = json::array();
    for (const auto& s : rec.spans) spans.push_back({{"begin", s.begin}, {"end", s.end}, {"instance", s.instance}});
    j["spans"] = std::move(spans);
    json props = json::array();
    for (const auto& b : rec.proposals) props.push_back(box_to_json(b));
    j["proposals"] = std::move(props);
    j["vocab_hash"] = rec.vocab_hash;
    return j.dump(2) + "\n";
}

SampleRecord sample_from_json(const std::string& text, const std::string& context) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(context + ": invalid JSON: " + e.what());
    }
    SampleRecord rec;
    try {
        rec.image_size = j.at("image_size").get<int64_t>();
        for (const auto& ji : j.at("instances")) {
            Instance inst;
            inst.cls = class_from_name(ji.at("class").get<std::string>());
            inst.box = box_from_json(ji.at("box"), context);
            inst.anchor = ji.at("anchor").get<int>();
            rec.instances.push_back(std::move(inst));
        }
        for (const auto& jr : j.at("relations")) {
            Relation r;
            r.subject = jr.at(0).get<int>();
            r.pred = predicate_from_name(jr.at(1).get<std::string>());
            r.object = jr.at(2).get<int>();
            if (r.pred == Predicate::between) r.object2 = jr.at(3).get<int>();
            rec.relations.push_back(r);
        }
        rec.prompt_box = box_from_json(j.at("prompt_box"), context);
        rec.in_prompt = j.at("in_prompt").get<std::vector<int>>();
        rec.caption = j.at("caption").get<std::vector<int64_t>>();
        for (const auto& js : j.at("spans"))
            rec.spans.push_back({js.at("begin").get<int64_t>(), js.at("end").get<int64_t>(), js.at("instance").get<int>()});
        for (const auto& jb : j.at("proposals")) rec.proposals.push_back(box_from_json(jb, context));
        rec.vocab_hash = j.at("vocab_hash").get<uint64_t>();
    } catch (const json::exception& e) {
        throw ParseError(context + ": " + e.what());
    }
    return rec;
}

void write_dataset(const std::vector<SampleRecord>& records, const SceneSpec& spec, const Vocabulary& vocab,
                   const fs::path& dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["version"] = 1;
    manifest["spec"] = json::parse(scene_spec_to_json(spec));
    manifest["sample_count"] = records.size();
    json samples = json::array();
    for (size_t i = 0; i < records.size(); ++i) {
        const SampleRecord& rec = records[i];
        const std::string img_name = "image_" + std::to_string(i) + ".ppm";
        const std::string json_name = "sample_" + std::to_string(i) + ".json";
        write_ppm(dir / img_name, rec.image_size, rec.image_size, rec.image);
        write_file(dir / json_name, sample_to_json(rec));
        json mask_names = json::array();
        for (size_t k = 0; k < rec.instances.size(); ++k) {
            const std::string mask_name = "mask_" + std::to_string(i) + "_" + std::to_string(k) + ".pgm";
            std::vector<uint8_t> gray(rec.instances[k].mask.size());
            for (size_t p = 0; p < gray.size(); ++p) gray[p] = rec.instances[k].mask[p] ? 255 : 0;
            write_pgm(dir / mask_name, rec.image_size, rec.image_size, gray);
            mask_names.push_back(mask_name);
        }
        samples.push_back({{"image", img_name}, {"json", json_name}, {"masks", std::move(mask_names)}});
    }
    manifest["samples"] = std::move(samples);
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    write_file(dir / "vocab.json", vocab.to_json());
}

Dataset read_dataset(const fs::path& dir) {
    Dataset ds;
    const fs::path manifest_path = dir / "manifest.json";
    json manifest;
    try {
        manifest = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        throw ParseError(manifest_path.string() + ": invalid JSON: " + e.what());
    }
    if (manifest.value("version", 0) != 1)
        throw ParseError(manifest_path.string() + ": unsupported manifest version");
    ds.spec = scene_spec_from_json(manifest.at("spec").dump());
    ds.vocab = Vocabulary::from_json(read_file(dir / "vocab.json"));

    const auto& samples = manifest.at("samples");
    const size_t declared = manifest.at("sample_count").get<size_t>();
    if (samples.size() != declared)
        throw ParseError(manifest_path.string() + ": integrity error, sample_count=" + std::to_string(declared) +
                         " but manifest lists " + std::to_string(samples.size()) + " samples");

    for (const auto& entry : samples) {
        const fs::path img_path = dir / entry.at("image").get<std::string>();
        const fs::path json_path = dir / entry.at("json").get<std::string>();
        if (!fs::exists(img_path) || !fs::exists(json_path))
            throw ParseError(manifest_path.string() + ": integrity error, files on disk do not match manifest (missing " +
                             (fs::exists(img_path) ? json_path.string() : img_path.string()) + ")");
        SampleRecord rec = sample_from_json(read_file(json_path), json_path.string());
        int64_t w = 0, h = 0;
        rec.image = read_ppm(img_path, w, h);
        if (w != rec.image_size || h != rec.image_size)
            throw ParseError(img_path.string() + ": image dimensions disagree with sample metadata");
        const auto& mask_names = entry.at("masks");
        if (mask_names.size() != rec.instances.size())
            throw ParseError(json_path.string() + ": integrity error, manifest lists " + std::to_string(mask_names.size()) +
                             " masks but sample has " + std::to_string(rec.instances.size()) + " instances");
        for (size_t k = 0; k < rec.instances.size(); ++k) {
            const fs::path mask_path = dir / mask_names[k].get<std::string>();
            std::vector<uint8_t> gray = read_pgm(mask_path, w, h);
            if (w != rec.image_size || h != rec.image_size)
                throw ParseError(mask_path.string() + ": mask dimensions disagree with sample metadata");
            rec.instances[k].mask.resize(gray.size());
            for (size_t p = 0; p < gray.size(); ++p) rec.instances[k].mask[p] = gray[p] >= 128 ? 1 : 0;
        }
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

} // namespace clv
