#include "kpe_forge/metrics.hpp"

#include "kpe_forge/dataset.hpp"
#include "kpe_forge/error.hpp"
#include "kpe_forge/kpe.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace kpeforge {

namespace {

struct Prototype {
    Color color;
    PixelClass cls;
};

std::vector<Prototype> prototypes() {
    std::vector<Prototype> p{{palette::kBackground, PixelClass::Background},
                             {palette::kHead, PixelClass::Head},
                             {palette::kArm, PixelClass::Arm},
                             {palette::kLeg, PixelClass::Leg}};
    for (const auto& s : palette::kShirts) p.push_back({s.color, PixelClass::Torso});
    return p;
}


double pixelDistance(std::pair<int, int> p, Vec2 q) {
    const double dx = p.first + 0.5 - q.x, dy = p.second + 0.5 - q.y;
    return std::sqrt(dx * dx + dy * dy);
}

double pointLineDistance(Vec2 p, Vec2 a, Vec2 b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len = std::sqrt(dx * dx + dy * dy);
    if (len == 0.0) return std::hypot(p.x - a.x, p.y - a.y);
    return std::abs(dx * (a.y - p.y) - dy * (a.x - p.x)) / len;
}

Vec2 center(std::pair<int, int> p) { return {p.first + 0.5, p.second + 0.5}; }

struct TorsoJoints {
    Vec2 lShoulder, rShoulder, lHip, rHip;
};

// Top row extremes give the shoulders, bottom row extremes the hips. The figure's
// left is the image right.
TorsoJoints torsoCorners(const Component& c) {
    int top = std::numeric_limits<int>::max(), bottom = -1;
    for (const auto& [x, y] : c.pixels) {
        top = std::min(top, y);
        bottom = std::max(bottom, y);
    }
    int topL = std::numeric_limits<int>::max(), topR = -1, botL = std::numeric_limits<int>::max(), botR = -1;
    for (const auto& [x, y] : c.pixels) {
        if (y == top) {
            topL = std::min(topL, x);
            topR = std::max(topR, x);
        }
        if (y == bottom) {
            botL = std::min(botL, x);
            botR = std::max(botR, x);
        }
    }
    return {{topR + 0.5, top + 0.5}, {topL + 0.5, top + 0.5}, {botR + 0.5, bottom + 0.5}, {botL + 0.5, bottom + 0.5}};
}

struct LimbFit {
    Vec2 mid;
    Vec2 end;
};

LimbFit fitLimb(const Component& c, Vec2 root) {
    std::pair<int, int> far = c.pixels.front();
    double best = -1.0;
    for (const auto& p : c.pixels) {
        const double d = pixelDistance(p, root);
        if (d > best) {
            best = d;
            far = p;
        }
    }
    const Vec2 end = center(far);
    Vec2 bend{};
    double bendDist = -1.0;
    for (const auto& p : c.pixels) {
        const double d = pointLineDistance(center(p), root, end);
        if (d > bendDist) {
            bendDist = d;
            bend = center(p);
        }
    }
    if (bendDist < 1.0) bend = {(root.x + end.x) / 2.0, (root.y + end.y) / 2.0};
    return {bend, end};
}

} // namespace

std::vector<PixelClass> classifyPixels(const Image& image, const OracleConfig& cfg) {
    if (image.channels != 3) throw InvalidArgument("the counting oracle expects RGB images");
    static const std::vector<Prototype> protos = prototypes();
    std::vector<PixelClass> out(static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height));
    const double limit2 = cfg.maxColorDistance * cfg.maxColorDistance;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            double best = std::numeric_limits<double>::infinity();
            PixelClass cls = PixelClass::Background;
            for (const auto& p : protos) {
                const double dr = image.at(x, y, 0) - p.color.r, dg = image.at(x, y, 1) - p.color.g,
                             db = image.at(x, y, 2) - p.color.b;
                const double d = dr * dr + dg * dg + db * db;
                if (d < best) {
                    best = d;
                    cls = p.cls;
                }
            }
            out[static_cast<std::size_t>(y) * static_cast<std::size_t>(image.width) + static_cast<std::size_t>(x)] =
                best <= limit2 ? cls : PixelClass::Background;
        }
    return out;
}

std::vector<Component> components(const std::vector<PixelClass>& classes, int width, int height, PixelClass cls,
                                  int minPixels) {
    std::vector<char> seen(classes.size(), 0);
    std::vector<Component> out;
    std::vector<std::pair<int, int>> stack;
    auto idx = [width](int x, int y) { return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x); };
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            if (seen[idx(x, y)] || classes[idx(x, y)] != cls) continue;
            Component c;
            stack.assign(1, {x, y});
            seen[idx(x, y)] = 1;
            while (!stack.empty()) {
                const auto [px, py] = stack.back();
                stack.pop_back();
                c.pixels.emplace_back(px, py);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = px + dx, ny = py + dy;
                        if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
                        if (seen[idx(nx, ny)] || classes[idx(nx, ny)] != cls) continue;
                        seen[idx(nx, ny)] = 1;
                        stack.emplace_back(nx, ny);
                    }
            }
            if (static_cast<int>(c.pixels.size()) < minPixels) continue;
            std::sort(c.pixels.begin(), c.pixels.end(), [](auto a, auto b) { return a.second != b.second ? a.second < b.second : a.first < b.first; });
            for (const auto& [px, py] : c.pixels) {
                c.cx += px + 0.5;
                c.cy += py + 0.5;
            }
            c.cx /= static_cast<double>(c.pixels.size());
            c.cy /= static_cast<double>(c.pixels.size());
            out.push_back(std::move(c));
        }
    return out;
}

PeopleCount countPeople(const Image& image, const OracleConfig& cfg) {
    const auto cls = classifyPixels(image, cfg);
    PeopleCount pc;
    pc.heads = static_cast<int>(components(cls, image.width, image.height, PixelClass::Head, cfg.minHeadPixels).size());
    pc.arms = static_cast<int>(components(cls, image.width, image.height, PixelClass::Arm, cfg.minLimbPixels).size());
    pc.legs = static_cast<int>(components(cls, image.width, image.height, PixelClass::Leg, cfg.minLimbPixels).size());
    pc.torsos = static_cast<int>(components(cls, image.width, image.height, PixelClass::Torso, cfg.minTorsoPixels).size());
    pc.count = std::max({pc.heads, (pc.arms + 1) / 2, (pc.legs + 1) / 2});
    return pc;
}

MultiPersonPose estimatePoses(const Image& image, const OracleConfig& cfg) {
    using namespace skel13;
    const auto cls = classifyPixels(image, cfg);
    const int W = image.width, H = image.height;
    const auto torsos = components(cls, W, H, PixelClass::Torso, cfg.minTorsoPixels);
    const auto heads = components(cls, W, H, PixelClass::Head, cfg.minHeadPixels);
    const auto arms = components(cls, W, H, PixelClass::Arm, cfg.minLimbPixels);
    const auto legs = components(cls, W, H, PixelClass::Leg, cfg.minLimbPixels);

    std::vector<TorsoJoints> tj;
    for (const auto& t : torsos) tj.push_back(torsoCorners(t));
    const std::size_t n = torsos.size();
    std::vector<std::vector<Keypoint>> joints(n, std::vector<Keypoint>(13));
    auto put = [&](std::size_t person, int joint, Vec2 px) {
        joints[person][static_cast<std::size_t>(joint)] = {std::clamp(px.x / W, 0.0, 1.0), std::clamp(px.y / H, 0.0, 1.0), 1.0};
    };
    for (std::size_t i = 0; i < n; ++i) {
        put(i, LShoulder, tj[i].lShoulder);
        put(i, RShoulder, tj[i].rShoulder);
        put(i, LHip, tj[i].lHip);
        put(i, RHip, tj[i].rHip);
    }

    // Greedy nearest assignment of parts to anchors, one part per anchor.
    struct Candidate {
        double dist;
        std::size_t part;
        std::size_t anchor;
    };
    auto assign = [](std::vector<Candidate> cands, std::size_t parts, std::size_t anchors, auto&& apply) {
        std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
            if (a.dist != b.dist) return a.dist < b.dist;
            return a.part != b.part ? a.part < b.part : a.anchor < b.anchor;
        });
        std::vector<char> partUsed(parts, 0), anchorUsed(anchors, 0);
        for (const auto& c : cands) {
            if (partUsed[c.part] || anchorUsed[c.anchor]) continue;
            partUsed[c.part] = anchorUsed[c.anchor] = 1;
            apply(c.part, c.anchor);
        }
    };

    {
        std::vector<Candidate> cands;
        for (std::size_t h = 0; h < heads.size(); ++h)
            for (std::size_t i = 0; i < n; ++i) {
                const double mx = (tj[i].lShoulder.x + tj[i].rShoulder.x) / 2.0, my = tj[i].lShoulder.y;
                if (heads[h].cy > my) continue;  // heads sit above their torso
                cands.push_back({std::hypot(heads[h].cx - mx, heads[h].cy - my), h, i});
            }
        assign(cands, heads.size(), n, [&](std::size_t h, std::size_t i) { put(i, Nose, {heads[h].cx, heads[h].cy}); });
    }
    auto attachLimbs = [&](const std::vector<Component>& limbs, int leftMid, int rightMid, int leftEnd, int rightEnd, bool arm) {
        std::vector<Candidate> cands;
        for (std::size_t l = 0; l < limbs.size(); ++l)
            for (std::size_t i = 0; i < n; ++i)
                for (int side = 0; side < 2; ++side) {
                    const Vec2 root = arm ? (side ? tj[i].lShoulder : tj[i].rShoulder) : (side ? tj[i].lHip : tj[i].rHip);
                    double d = std::numeric_limits<double>::infinity();
                    for (const auto& p : limbs[l].pixels) d = std::min(d, pixelDistance(p, root));
                    cands.push_back({d, l, 2 * i + static_cast<std::size_t>(side)});
                }
        assign(cands, limbs.size(), 2 * n, [&](std::size_t l, std::size_t anchor) {
            const std::size_t i = anchor / 2;
            const bool left = anchor % 2 == 1;
            const Vec2 root = arm ? (left ? tj[i].lShoulder : tj[i].rShoulder) : (left ? tj[i].lHip : tj[i].rHip);
            const LimbFit fit = fitLimb(limbs[l], root);
            put(i, left ? leftMid : rightMid, fit.mid);
            put(i, left ? leftEnd : rightEnd, fit.end);
        });
    };
    attachLimbs(arms, LElbow, RElbow, LWrist, RWrist, true);
    attachLimbs(legs, LKnee, RKnee, LAnkle, RAnkle, false);

    MultiPersonPose out(JointScheme::Skel13, std::max<int>(1, static_cast<int>(n)));
    for (auto& j : joints) out.add(PersonPose(JointScheme::Skel13, std::move(j)));
    return canonicalPersonOrder(out);
}

int pce(int detected, int gt) {
    if (gt < 0) throw InvalidArgument("ground-truth count must be >= 0");
    return detected != gt ? 1 : 0;
}

int pce(const Image& image, int gt, const OracleConfig& cfg) { return pce(countPeople(image, cfg).count, gt); }

double pceRate(const std::vector<int>& indicators) {
    if (indicators.empty()) throw UndefinedScore("PCE rate of an empty record set");
    double sum = 0.0;
    for (int v : indicators) sum += v;
    return sum / static_cast<double>(indicators.size());
}

void SsimConfig::validate() const {
    if (window < 1 || window % 2 == 0) throw ConfigError("SSIM window must be a positive odd size");
    if (!(sigma > 0.0) || !(k1 > 0.0) || !(k2 > 0.0) || !(range > 0.0)) throw ConfigError("SSIM constants must be positive");
}

double ssim(const Image& a, const Image& b, const SsimConfig& cfg) {
    cfg.validate();
    if (!a.sameShape(b)) throw InvalidArgument("SSIM needs images of equal dimensions");
    if (a.empty()) throw UndefinedScore("SSIM of an empty image");
    const int r = cfg.window / 2;
    std::vector<double> g(static_cast<std::size_t>(cfg.window));
    for (int i = -r; i <= r; ++i) g[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2.0 * cfg.sigma * cfg.sigma));
    const double c1 = std::pow(cfg.k1 * cfg.range, 2), c2 = std::pow(cfg.k2 * cfg.range, 2);
    double total = 0.0;
    for (int ch = 0; ch < a.channels; ++ch)
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x) {
                double wsum = 0, ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int dy = -r; dy <= r; ++dy) {
                    const int yy = y + dy;
                    if (yy < 0 || yy >= a.height) continue;
                    for (int dx = -r; dx <= r; ++dx) {
                        const int xx = x + dx;
                        if (xx < 0 || xx >= a.width) continue;
                        const double w = g[static_cast<std::size_t>(dy + r)] * g[static_cast<std::size_t>(dx + r)];
                        const double va = a.at(xx, yy, ch), vb = b.at(xx, yy, ch);
                        wsum += w;
                        ma += w * va;
                        mb += w * vb;
                        saa += w * va * va;
                        sbb += w * vb * vb;
                        sab += w * va * vb;
                    }
                }
                ma /= wsum;
                mb /= wsum;
                const double va = std::max(0.0, saa / wsum - ma * ma), vb = std::max(0.0, sbb / wsum - mb * mb);
                const double cov = sab / wsum - ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
    return total / (static_cast<double>(a.width) * a.height * a.channels);
}

double maskSsim(const Image& generated, const Image& reference, const Mask& mask, const SsimConfig& cfg) {
    if (!generated.sameShape(reference)) throw InvalidArgument("mask-SSIM needs images of equal dimensions");
    if (mask.width != generated.width || mask.height != generated.height) throw InvalidArgument("mask size differs from the images");
    int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) throw UndefinedScore("mask-SSIM with an empty foreground mask");
    const int w = x1 - x0 + 1, h = y1 - y0 + 1;
    Image a(w, h, generated.channels), b(w, h, generated.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const bool fg = mask.at(x0 + x, y0 + y);
            for (int c = 0; c < generated.channels; ++c) {
                a.at(x, y, c) = fg ? generated.at(x0 + x, y0 + y, c) : 0.0F;
                b.at(x, y, c) = fg ? reference.at(x0 + x, y0 + y, c) : 0.0F;
            }
        }
    return ssim(a, b, cfg);
}

EvalSummary summarize(const std::vector<EvalRecord>& records) {
    EvalSummary s;
    s.images = records.size();
    if (records.empty()) return s;
    std::vector<int> ind;
    for (const auto& r : records) {
        ind.push_back(r.pce);
        s.meanOks += r.oks;
        s.meanMaskSsim += r.maskSsim;
    }
    s.pceRate = pceRate(ind);
    s.meanOks /= static_cast<double>(records.size());
    s.meanMaskSsim /= static_cast<double>(records.size());
    return s;
}

void writeEvalCsv(std::ostream& out, const std::vector<EvalRecord>& records) {
    out << "id,sample,gt,h,pce,oks,mask_ssim\n";
    char line[200];
    for (const auto& r : records) {
        std::snprintf(line, sizeof line, ",%d,%d,%d,%d,%.6f,%.6f\n", r.sample, r.gt, r.h, r.pce, r.oks, r.maskSsim);
        out << r.id << line;
    }
}

std::string evalSummaryJson(const EvalSummary& s, const std::string& mode, const std::string& configHash) {
    nlohmann::ordered_json j;
    j["mode"] = mode;
    j["images"] = s.images;
    j["pce_rate"] = s.pceRate;
    j["mean_oks"] = s.meanOks;
    j["mean_mask_ssim"] = s.meanMaskSsim;
    j["config_hash"] = configHash;
    return j.dump(2);
}

} // namespace kpeforge
