#include "dgcn/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "dgcn/errors.hpp"

namespace fs = std::filesystem;

namespace dgcn {

namespace {

constexpr char kMagic[4] = {'D', 'G', 'S', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Reader {
  public:
    Reader(const std::string& bytes, const std::string& origin) : b_(bytes), origin_(origin) {}

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string str(const char* what) {
        auto n = u32(what);
        need(n, what);
        auto s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void need(std::size_t n, const std::string& what) const {
        if (b_.size() - pos_ < n)
            throw ParseError(origin_ + ": truncated at byte " + std::to_string(pos_) + " while reading " + what);
    }
    std::size_t pos() const { return pos_; }
    void skip(std::size_t n) { pos_ += n; }
    const char* here() const { return b_.data() + pos_; }
    std::size_t remaining() const { return b_.size() - pos_; }

  private:
    const std::string& b_;
    std::string origin_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::string encode_binary(const SkeletonSequence& seq) {
    std::string out(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(seq.joints));
    put_u32(out, static_cast<std::uint32_t>(seq.dims));
    put_u32(out, static_cast<std::uint32_t>(seq.persons));
    put_u32(out, static_cast<std::uint32_t>(seq.frames));
    put_u32(out, static_cast<std::uint32_t>(seq.label));
    put_str(out, seq.layout);
    put_str(out, seq.sample_id);
    out.reserve(out.size() + 4 * seq.values.size());
    for (float v : seq.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

SkeletonSequence decode_binary(const std::string& bytes, const std::string& origin) {
    Reader r(bytes, origin);
    r.need(4, "magic");
    r.skip(4);
    auto version = r.u32("version");
    if (version != kVersion) throw ParseError(origin + ": unsupported sequence version " + std::to_string(version));
    SkeletonSequence seq;
    seq.joints = r.u32("joint count");
    seq.dims = r.u32("dims");
    seq.persons = r.u32("person count");
    seq.frames = r.u32("frame count");
    seq.label = static_cast<std::int32_t>(r.u32("label"));
    seq.layout = r.str("layout name");
    seq.sample_id = r.str("sample id");
    if (seq.joints == 0 || seq.dims == 0 || seq.persons == 0 || seq.frames == 0)
        throw ParseError(origin + ": empty dimension in header");
    const std::size_t per_frame = seq.persons * seq.joints * seq.dims;
    if (per_frame > (std::size_t(1) << 28)) throw ParseError(origin + ": implausible frame size");
    seq.values.resize(per_frame * seq.frames);
    for (std::size_t t = 0; t < seq.frames; ++t) {
        if (r.remaining() < 4 * per_frame)
            throw ParseError(origin + ": frame " + std::to_string(t) + " truncated at byte " +
                             std::to_string(r.pos() + r.remaining()) + " (needs " + std::to_string(4 * per_frame) +
                             " bytes from " + std::to_string(r.pos()) + ")");
        for (std::size_t i = 0; i < per_frame; ++i) seq.values[t * per_frame + i] = std::bit_cast<float>(r.u32("value"));
    }
    if (r.remaining() != 0)
        throw ParseError(origin + ": " + std::to_string(r.remaining()) + " trailing bytes after frame data");
    seq.validate();
    return seq;
}

std::string float_text(float v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream is(line);
    std::vector<std::string> out;
    for (std::string w; is >> w;) out.push_back(w);
    return out;
}

std::size_t parse_count(const std::string& s, const std::string& where) {
    std::size_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError(where + ": expected a non-negative integer, got '" + s + "'");
    return v;
}

}  // namespace

void SkeletonSequence::validate() const {
    if (frames == 0) throw ValidationError("sequence '" + sample_id + "': needs at least one frame");
    if (persons == 0 || persons > 2)
        throw ValidationError("sequence '" + sample_id + "': persons must be 1 or 2, got " + std::to_string(persons));
    if (joints == 0 || dims == 0) throw ValidationError("sequence '" + sample_id + "': empty joint or coordinate axis");
    if (label < 0) throw ValidationError("sequence '" + sample_id + "': negative label");
    if (values.size() != frames * persons * joints * dims)
        throw ValidationError("sequence '" + sample_id + "': holds " + std::to_string(values.size()) +
                              " values, header implies " + std::to_string(frames * persons * joints * dims));
}

std::string format_sequence_text(const SkeletonSequence& seq) {
    std::ostringstream os;
    os << "dgcn-sequence 1\n"
       << "joints " << seq.joints << "\ndims " << seq.dims << "\npersons " << seq.persons << "\nframes "
       << seq.frames << "\nlabel " << seq.label << "\n";
    if (!seq.layout.empty()) os << "layout " << seq.layout << "\n";
    if (!seq.sample_id.empty()) os << "id " << seq.sample_id << "\n";
    for (std::size_t t = 0; t < seq.frames; ++t) {
        os << "frame " << t << "\n";
        for (std::size_t m = 0; m < seq.persons; ++m) {
            os << "person " << m << "\n";
            for (std::size_t n = 0; n < seq.joints; ++n) {
                for (std::size_t d = 0; d < seq.dims; ++d) os << (d ? " " : "") << float_text(seq.at(t, m, n, d));
                os << "\n";
            }
        }
    }
    return os.str();
}

SkeletonSequence parse_sequence_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::vector<std::pair<std::size_t, std::vector<std::string>>> lines;
    std::string raw;
    for (std::size_t no = 1; std::getline(in, raw); ++no) {
        if (auto h = raw.find('#'); h != std::string::npos) raw.erase(h);
        auto words = split_ws(raw);
        if (!words.empty()) lines.emplace_back(no, std::move(words));
    }
    auto where = [&](std::size_t no) { return origin + ":" + std::to_string(no); };
    if (lines.empty() || lines[0].second.size() != 2 || lines[0].second[0] != "dgcn-sequence")
        throw ParseError(origin + ": missing 'dgcn-sequence <version>' header");
    if (lines[0].second[1] != "1") throw ParseError(origin + ": unsupported sequence version " + lines[0].second[1]);

    SkeletonSequence seq;
    std::map<std::string, bool> seen;
    std::size_t i = 1;
    for (; i < lines.size() && lines[i].second[0] != "frame"; ++i) {
        const auto& [no, w] = lines[i];
        if (w.size() != 2) throw ParseError(where(no) + ": expected '<key> <value>'");
        const auto& key = w[0];
        if (seen[key]) throw ParseError(where(no) + ": duplicate '" + key + "'");
        seen[key] = true;
        if (key == "joints") seq.joints = parse_count(w[1], where(no));
        else if (key == "dims") seq.dims = parse_count(w[1], where(no));
        else if (key == "persons") seq.persons = parse_count(w[1], where(no));
        else if (key == "frames") seq.frames = parse_count(w[1], where(no));
        else if (key == "label") seq.label = static_cast<int>(parse_count(w[1], where(no)));
        else if (key == "layout") seq.layout = w[1];
        else if (key == "id") seq.sample_id = w[1];
        else throw ParseError(where(no) + ": unknown key '" + key + "'");
    }
    for (const char* k : {"joints", "frames"})
        if (!seen[k]) throw ParseError(origin + ": header is missing '" + std::string(k) + "'");
    try {
        seq.values.assign(seq.frames * seq.persons * seq.joints * seq.dims, 0.0f);
        seq.validate();
    } catch (const ValidationError& e) {
        throw ParseError(origin + ": " + e.what());
    }

    std::size_t frame = 0;
    while (i < lines.size()) {
        const auto& [fno, fw] = lines[i];
        if (fw[0] != "frame" || fw.size() != 2) throw ParseError(where(fno) + ": expected 'frame <index>'");
        if (frame >= seq.frames)
            throw ParseError(where(fno) + ": more than the declared " + std::to_string(seq.frames) + " frames");
        if (parse_count(fw[1], where(fno)) != frame)
            throw ParseError(where(fno) + ": frame " + fw[1] + " out of order, expected " + std::to_string(frame));
        ++i;
        std::vector<bool> person_seen(seq.persons, false);
        while (i < lines.size() && lines[i].second[0] == "person") {
            const auto& [pno, pw] = lines[i];
            if (pw.size() != 2) throw ParseError(where(pno) + ": expected 'person <index>'");
            auto m = parse_count(pw[1], where(pno));
            if (m >= seq.persons || person_seen[m])
                throw ParseError(where(pno) + ": frame " + std::to_string(frame) + " has invalid or repeated person " +
                                 pw[1]);
            person_seen[m] = true;
            ++i;
            std::size_t n = 0;
            for (; i < lines.size() && lines[i].second[0] != "person" && lines[i].second[0] != "frame"; ++i, ++n) {
                const auto& [jno, jw] = lines[i];
                if (n >= seq.joints)
                    throw ParseError(where(jno) + ": frame " + std::to_string(frame) + ", person " +
                                     std::to_string(m) + ": more than " + std::to_string(seq.joints) + " joints");
                if (jw.size() != seq.dims)
                    throw ParseError(where(jno) + ": frame " + std::to_string(frame) + ": joint " + std::to_string(n) +
                                     " has " + std::to_string(jw.size()) + " values, expected " +
                                     std::to_string(seq.dims));
                for (std::size_t d = 0; d < seq.dims; ++d) {
                    float v = 0;
                    const auto& s = jw[d];
                    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
                    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
                        throw ParseError(where(jno) + ": frame " + std::to_string(frame) + ": bad number '" + s + "'");
                    seq.at(frame, m, n, d) = v;
                }
            }
            if (n != seq.joints)
                throw ParseError(origin + ": frame " + std::to_string(frame) + ", person " + std::to_string(m) +
                                 ": expected " + std::to_string(seq.joints) + " joints, got " + std::to_string(n));
        }
        ++frame;
    }
    if (frame != seq.frames)
        throw ParseError(origin + ": declares " + std::to_string(seq.frames) + " frames, found " +
                         std::to_string(frame));
    return seq;
}

void save_sequence(const SkeletonSequence& seq, const std::string& path, SequenceFormat format) {
    seq.validate();
    write_file(path, format == SequenceFormat::binary ? encode_binary(seq) : format_sequence_text(seq));
}

SkeletonSequence load_sequence(const std::string& path) {
    auto bytes = read_file(path);
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0) return decode_binary(bytes, path);
    return parse_sequence_text(bytes, path);
}

SkeletonSequence resize_sequence(const SkeletonSequence& seq, std::size_t target) {
    seq.validate();
    if (target == 0) throw ValidationError("resize_sequence: target length must be >= 1");
    SkeletonSequence out = seq;
    out.frames = target;
    const std::size_t per_frame = seq.persons * seq.joints * seq.dims;
    out.values.assign(target * per_frame, 0.0f);
    for (std::size_t i = 0; i < target; ++i) {
        double pos = target == 1 ? (seq.frames - 1) / 2.0
                                 : double(i * (seq.frames - 1)) / double(target - 1);
        auto lo = std::min<std::size_t>(static_cast<std::size_t>(std::floor(pos)), seq.frames - 1);
        auto hi = std::min(lo + 1, seq.frames - 1);
        double f = pos - double(lo);
        for (std::size_t k = 0; k < per_frame; ++k) {
            double a = seq.values[lo * per_frame + k], b = seq.values[hi * per_frame + k];
            out.values[i * per_frame + k] = static_cast<float>(f == 0.0 ? a : a + f * (b - a));
        }
    }
    return out;
}

std::size_t position_dims(const SkeletonSequence& seq) {
    return seq.layout == "openpose18" ? std::min<std::size_t>(2, seq.dims) : seq.dims;
}

SkeletonSequence normalize_coords(const SkeletonSequence& seq, const SkeletonLayout& layout) {
    seq.validate();
    if (layout.n_joints != seq.joints)
        throw DimensionError("normalize_coords: layout '" + layout.name + "' has " + std::to_string(layout.n_joints) +
                             " joints, sequence has " + std::to_string(seq.joints));
    SkeletonSequence out = seq;
    const std::size_t pd = position_dims(seq);
    std::vector<float> origin(pd);
    for (std::size_t d = 0; d < pd; ++d) origin[d] = seq.at(0, 0, layout.center_joint, d);
    for (std::size_t t = 0; t < seq.frames; ++t)
        for (std::size_t m = 0; m < seq.persons; ++m) {
            bool present = false;
            for (std::size_t n = 0; n < seq.joints && !present; ++n)
                for (std::size_t d = 0; d < seq.dims; ++d) present |= seq.at(t, m, n, d) != 0.0f;
            if (!present) continue;
            for (std::size_t n = 0; n < seq.joints; ++n)
                for (std::size_t d = 0; d < pd; ++d) out.at(t, m, n, d) -= origin[d];
        }
    return out;
}

Tensor<float> sequences_to_tensor(const std::vector<const SkeletonSequence*>& seqs) {
    if (seqs.empty()) throw ValidationError("sequences_to_tensor: empty batch");
    const auto& f = *seqs.front();
    const std::size_t m = f.persons, d = f.dims, t = f.frames, n = f.joints;
    std::vector<float> data(seqs.size() * m * d * t * n);
    for (std::size_t b = 0; b < seqs.size(); ++b) {
        const auto& s = *seqs[b];
        if (s.persons != m || s.dims != d || s.frames != t || s.joints != n)
            throw DimensionError("sequences_to_tensor: sample '" + s.sample_id + "' shape differs from '" +
                                 f.sample_id + "'");
        for (std::size_t p = 0; p < m; ++p)
            for (std::size_t c = 0; c < d; ++c)
                for (std::size_t ti = 0; ti < t; ++ti)
                    for (std::size_t j = 0; j < n; ++j)
                        data[(((b * m + p) * d + c) * t + ti) * n + j] = s.at(ti, p, j, c);
    }
    return Tensor<float>({seqs.size() * m, d, t, n}, std::move(data));
}

SkeletonSequence convert_ntu_skeleton(const std::string& path) {
    throw StateError("convert_ntu_skeleton: raw NTU ingestion is not implemented ('" + path +
                     "'); convert to the sequence format externally");
}

std::size_t DatasetManifest::n_classes() const {
    if (!class_names.empty()) return class_names.size();
    int top = -1;
    for (const auto& e : entries) top = std::max(top, e.label);
    return static_cast<std::size_t>(top + 1);
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    auto dir = fs::absolute(path).parent_path();
    std::ostringstream os;
    if (!manifest.layout.empty()) os << "# layout " << manifest.layout << "\n";
    if (!manifest.split.empty()) os << "# split " << manifest.split << "\n";
    for (std::size_t c = 0; c < manifest.class_names.size(); ++c)
        os << "# class " << c << " " << manifest.class_names[c] << "\n";
    for (const auto& e : manifest.entries) {
        auto rel = fs::absolute(e.path).lexically_relative(dir);
        os << (rel.empty() ? e.path : rel.generic_string()) << "\t" << e.label << "\n";
    }
    write_file(path, os.str());
}

DatasetManifest load_manifest(const std::string& path) {
    auto text = read_file(path);
    auto dir = fs::absolute(path).parent_path();
    DatasetManifest m;
    std::map<std::size_t, std::string> classes;
    std::istringstream in(text);
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        auto where = path + ":" + std::to_string(no);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto w = split_ws(line.substr(1));
            if (w.size() == 2 && w[0] == "layout") m.layout = w[1];
            else if (w.size() == 2 && w[0] == "split") m.split = w[1];
            else if (w.size() >= 3 && w[0] == "class") {
                auto idx = parse_count(w[1], where);
                if (classes.count(idx)) throw ParseError(where + ": class " + w[1] + " declared twice");
                classes[idx] = w[2];
            }
            continue;
        }
        auto tab = line.rfind('\t');
        if (tab == std::string::npos || tab == 0) throw ParseError(where + ": expected '<path>\\t<label>'");
        ManifestEntry e;
        fs::path p = line.substr(0, tab);
        e.path = (p.is_absolute() ? p : (dir / p)).lexically_normal().string();
        e.label = static_cast<int>(parse_count(line.substr(tab + 1), where));
        m.entries.push_back(std::move(e));
    }
    for (std::size_t c = 0; c < classes.size(); ++c) {
        if (!classes.count(c)) throw ParseError(path + ": class table skips index " + std::to_string(c));
        m.class_names.push_back(classes[c]);
    }
    for (const auto& e : m.entries) {
        if (!m.class_names.empty() && static_cast<std::size_t>(e.label) >= m.class_names.size())
            throw ValidationError(path + ": label " + std::to_string(e.label) + " of '" + e.path +
                                  "' is outside the class table");
        if (!fs::exists(e.path)) throw ValidationError(path + ": listed file '" + e.path + "' does not exist");
    }
    return m;
}

std::vector<SkeletonSequence> load_dataset(const DatasetManifest& manifest) {
    std::vector<SkeletonSequence> out;
    out.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        auto s = load_sequence(e.path);
        if (s.label != e.label)
            throw ValidationError("'" + e.path + "': file label " + std::to_string(s.label) + " but manifest says " +
                                  std::to_string(e.label));
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

struct ClassProgram {
    std::vector<std::size_t> joints;
    std::vector<std::array<double, 3>> directions;
    double frequency = 1;
    double amplitude = 0.6;
};

struct SynthWorld {
    SkeletonLayout layout;
    std::vector<std::array<double, 3>> rest;
    std::vector<ClassProgram> classes;
};

std::array<double, 3> random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    for (;;) {
        std::array<double, 3> v{g(rng), g(rng), g(rng)};
        double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (len > 1e-3) return {v[0] / len, v[1] / len, v[2] / len};
    }
}

SynthWorld build_world(const SynthSpec& spec) {
    if (spec.n_classes < 2) throw ValidationError("synth: need at least 2 classes");
    if (spec.frames < 2) throw ValidationError("synth: need at least 2 frames");
    if (!(spec.noise_sigma >= 0)) throw ValidationError("synth: noise_sigma must be >= 0");
    SynthWorld w;
    w.layout = build_layout(spec.layout);
    const std::size_t n = w.layout.n_joints;
    std::mt19937_64 rng(spec.seed);

    // Rest pose: bones of length 0.1 to 0.2 grown outward from the center.
    w.rest.assign(n, {0, 0, 0});
    std::uniform_real_distribution<double> len(0.1, 0.2);
    auto hops = w.layout.hop_distances();
    auto bones = w.layout.bone_pairs;
    std::stable_sort(bones.begin(), bones.end(),
                     [&](const JointPair& a, const JointPair& b) { return hops[a.second] < hops[b.second]; });
    for (const auto& [src, dst] : bones) {
        auto dir = random_unit(rng);
        double l = len(rng);
        for (int d = 0; d < 3; ++d) w.rest[dst][d] = w.rest[src][d] + l * dir[d];
    }

    std::vector<std::vector<std::size_t>> nbrs(n);
    for (const auto& [a, b] : w.layout.edges) {
        nbrs[a].push_back(b);
        nbrs[b].push_back(a);
    }
    const std::size_t group = std::max<std::size_t>(2, std::min<std::size_t>(5, n / spec.n_classes));
    std::vector<bool> used(n, false);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t k = 0; k < spec.n_classes; ++k) {
        ClassProgram c;
        std::vector<std::size_t> free;
        for (std::size_t j = 0; j < n; ++j)
            if (!used[j]) free.push_back(j);
        if (free.empty()) {
            std::fill(used.begin(), used.end(), false);
            for (std::size_t j = 0; j < n; ++j) free.push_back(j);
        }
        std::size_t seed_joint = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
        std::vector<std::size_t> frontier{seed_joint};
        used[seed_joint] = true;
        c.joints.push_back(seed_joint);
        for (std::size_t f = 0; f < frontier.size() && c.joints.size() < group; ++f)
            for (auto nb : nbrs[frontier[f]])
                if (!used[nb] && c.joints.size() < group) {
                    used[nb] = true;
                    c.joints.push_back(nb);
                    frontier.push_back(nb);
                }
        std::sort(c.joints.begin(), c.joints.end());
        for (std::size_t j = 0; j < c.joints.size(); ++j) c.directions.push_back(random_unit(rng));
        c.frequency = 1.5 + 0.75 * static_cast<double>(k % 4) + 0.25 * unit(rng);
        c.amplitude = 0.6 + 0.2 * unit(rng);
        w.classes.push_back(std::move(c));
    }
    return w;
}

SkeletonSequence make_sample(const SynthSpec& spec, const SynthWorld& w, std::size_t cls, double phase,
                             std::mt19937_64& noise_rng, std::string id) {
    const std::size_t n = w.layout.n_joints;
    SkeletonSequence s(spec.frames, 1, n, 3);
    s.label = static_cast<int>(cls);
    s.layout = w.layout.name;
    s.sample_id = std::move(id);
    const auto& c = w.classes[cls];
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t t = 0; t < spec.frames; ++t) {
        double angle = 2 * std::numbers::pi * c.frequency * double(t) / double(spec.frames) + phase;
        double wave = c.amplitude * std::sin(angle);
        for (std::size_t j = 0; j < n; ++j) {
            std::array<double, 3> p = w.rest[j];
            for (std::size_t g = 0; g < c.joints.size(); ++g)
                if (c.joints[g] == j)
                    for (int d = 0; d < 3; ++d) p[d] += wave * c.directions[g][d];
            for (int d = 0; d < 3; ++d) {
                double v = p[d];
                if (spec.noise_sigma > 0) v += spec.noise_sigma * noise(noise_rng);
                s.at(t, 0, j, d) = static_cast<float>(v);
            }
        }
    }
    return s;
}

}  // namespace

std::vector<SkeletonSequence> synth_samples(const SynthSpec& spec, const std::string& split) {
    if (split != "train" && split != "test") throw ValidationError("synth: split must be 'train' or 'test'");
    auto world = build_world(spec);
    const std::size_t per_class = split == "train" ? spec.train_per_class : spec.test_per_class;
    std::mt19937_64 rng(spec.seed ^ (split == "train" ? 0x7472616eULL : 0x74657374ULL));
    std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
    std::vector<SkeletonSequence> out;
    for (std::size_t i = 0; i < per_class; ++i)
        for (std::size_t k = 0; k < spec.n_classes; ++k) {
            char id[64];
            std::snprintf(id, sizeof id, "%s_c%02zu_%04zu", split.c_str(), k, i);
            double ph = phase(rng);
            out.push_back(make_sample(spec, world, k, ph, rng, id));
        }
    return out;
}

SynthResult synth_generate(const SynthSpec& spec, const std::string& out_dir) {
    SynthResult result;
    std::vector<std::string> names;
    for (std::size_t k = 0; k < spec.n_classes; ++k) names.push_back("class" + std::to_string(k));
    for (const std::string split : {"train", "test"}) {
        auto dir = fs::path(out_dir) / split;
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
        DatasetManifest m;
        m.layout = spec.layout;
        m.split = split;
        m.class_names = names;
        for (const auto& s : synth_samples(spec, split)) {
            auto p = (dir / (s.sample_id + ".dgsk")).string();
            save_sequence(s, p);
            m.entries.push_back({p, s.label});
        }
        auto mpath = (fs::path(out_dir) / (split + ".manifest")).string();
        save_manifest(m, mpath);
        (split == "train" ? result.train_manifest_path : result.test_manifest_path) = mpath;
        (split == "train" ? result.train : result.test) = load_manifest(mpath);
    }
    return result;
}

}  // namespace dgcn
