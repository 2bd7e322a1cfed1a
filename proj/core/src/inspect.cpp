#include "nexus/inspect.hpp"

#include "nexus/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <sstream>

using nlohmann::json;

namespace nexus {

Raster Raster::crop(int x0, int y0, int x1, int y1) const {
    x0 = std::clamp(x0, 0, width);
    x1 = std::clamp(x1, x0, width);
    y0 = std::clamp(y0, 0, height);
    y1 = std::clamp(y1, y0, height);
    Raster out;
    out.width = x1 - x0;
    out.height = y1 - y0;
    out.codes.resize(static_cast<std::size_t>(out.width) * out.height);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x)
            out.at(x - x0, y - y0) = at(x, y);
    }
    return out;
}

std::size_t Raster::count(std::uint8_t code) const {
    return static_cast<std::size_t>(std::count(codes.begin(), codes.end(), code));
}

double Raster::mismatch_fraction() const {
    if (codes.empty())
        return 0.0;
    return static_cast<double>(count(kContourMismatch)) / static_cast<double>(codes.size());
}

VizKind viz_kind_from_string(const std::string& text) {
    if (text == "raw_mosaic")
        return VizKind::raw_mosaic;
    if (text == "mask_contour_montage")
        return VizKind::mask_contour_montage;
    if (text == "segmentation_contour_montage")
        return VizKind::segmentation_contour_montage;
    if (text == "template_contour_montage")
        return VizKind::template_contour_montage;
    fail(Errc::parse_error, "unknown visualization kind '" + text + "'");
}

const char* viz_kind_to_string(VizKind kind) {
    switch (kind) {
    case VizKind::raw_mosaic: return "raw_mosaic";
    case VizKind::mask_contour_montage: return "mask_contour_montage";
    case VizKind::segmentation_contour_montage: return "segmentation_contour_montage";
    case VizKind::template_contour_montage: return "template_contour_montage";
    }
    return "?";
}

namespace {

// 2D slice of mask occupancy along one axis at a fixed position.
struct Slice {
    int w = 0, h = 0;
    std::vector<bool> in;
    bool at(int u, int v) const { return in[static_cast<std::size_t>(v) * w + u]; }
};

Slice take_slice(const VoxelGrid& grid, int axis, int pos, bool binary) {
    Slice s;
    std::array<int, 3> d = grid.dims;
    int ua = (axis + 1) % 3;
    int va = (axis + 2) % 3;
    s.w = d[ua];
    s.h = d[va];
    s.in.assign(static_cast<std::size_t>(s.w) * s.h, false);
    std::array<int, 3> idx{};
    idx[axis] = pos;
    for (int v = 0; v < s.h; ++v) {
        for (int u = 0; u < s.w; ++u) {
            idx[ua] = u;
            idx[va] = v;
            double value = grid.at(idx[0], idx[1], idx[2]);
            s.in[static_cast<std::size_t>(v) * s.w + u] = binary ? value != 0.0 : value > 0.0;
        }
    }
    return s;
}

// 4-neighbour boundary of the slice occupancy.
std::vector<bool> boundary_of(const Slice& s) {
    std::vector<bool> edge(s.in.size(), false);
    for (int v = 0; v < s.h; ++v) {
        for (int u = 0; u < s.w; ++u) {
            if (!s.at(u, v))
                continue;
            bool on_edge = u == 0 || v == 0 || u == s.w - 1 || v == s.h - 1 ||
                           !s.at(u - 1, v) || !s.at(u + 1, v) || !s.at(u, v - 1) ||
                           !s.at(u, v + 1);
            if (on_edge)
                edge[static_cast<std::size_t>(v) * s.w + u] = true;
        }
    }
    return edge;
}

} // namespace

Raster render_montage(const VoxelGrid& base, const VoxelGrid* mask,
                      const VoxelGrid* reference_mask, VizKind kind) {
    if (mask && !base.same_dims(*mask))
        fail(Errc::dim_mismatch, "mask dims differ from base");
    if (reference_mask && !base.same_dims(*reference_mask))
        fail(Errc::dim_mismatch, "reference mask dims differ from base");

    // 3x3 montage: quartile/mid/three-quartile slices per axis, tiled in a row.
    std::vector<Slice> base_slices, mask_slices, ref_slices;
    for (int axis = 0; axis < 3; ++axis) {
        int d = base.dims[axis];
        std::vector<int> positions = {d / 4, d / 2, (3 * d) / 4};
        positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
        for (int pos : positions) {
            base_slices.push_back(take_slice(base, axis, pos, false));
            if (mask)
                mask_slices.push_back(take_slice(*mask, axis, pos, true));
            if (reference_mask)
                ref_slices.push_back(take_slice(*reference_mask, axis, pos, true));
        }
    }

    int total_w = 0;
    int max_h = 0;
    for (const auto& s : base_slices) {
        total_w += s.w;
        max_h = std::max(max_h, s.h);
    }
    Raster raster;
    raster.width = total_w;
    raster.height = max_h;
    raster.codes.assign(static_cast<std::size_t>(total_w) * max_h, Raster::kBackground);

    int x_off = 0;
    for (std::size_t i = 0; i < base_slices.size(); ++i) {
        const Slice& bs = base_slices[i];
        std::vector<bool> mask_edge, ref_edge;
        if (kind != VizKind::raw_mosaic) {
            if (i < mask_slices.size())
                mask_edge = boundary_of(mask_slices[i]);
            if (i < ref_slices.size())
                ref_edge = boundary_of(ref_slices[i]);
        }
        for (int v = 0; v < bs.h; ++v) {
            for (int u = 0; u < bs.w; ++u) {
                std::uint8_t code = bs.at(u, v) ? Raster::kTissue : Raster::kBackground;
                std::size_t flat = static_cast<std::size_t>(v) * bs.w + u;
                bool on_mask = !mask_edge.empty() && mask_edge[flat];
                bool on_ref = !ref_edge.empty() && ref_edge[flat];
                if (on_mask && on_ref)
                    code = Raster::kContourMatch;
                else if (on_mask || on_ref)
                    code = Raster::kContourMismatch;
                raster.at(x_off + u, v) = code;
            }
        }
        x_off += bs.w;
    }
    return raster;
}

VisualizationDescriptor make_visualization(const std::string& subject, const std::string& step,
                                           VizKind kind, const VoxelGrid& base,
                                           const VoxelGrid* mask,
                                           const VoxelGrid* reference_mask) {
    VisualizationDescriptor viz;
    viz.subject = subject;
    viz.step = step;
    viz.kind = kind;
    viz.image = render_montage(base, mask, reference_mask, kind);
    return viz;
}

JudgeReply StubJudge::assess(const Raster& view, const VisualizationDescriptor& context,
                             const InspectionProtocol& protocol, int turn) {
    (void)view;
    if (turn == 1 && protocol.max_turns >= 2) {
        // zoom into the quadrant with the highest mismatch count
        const Raster& full = context.image;
        int hw = std::max(full.width / 2, 1);
        int hh = std::max(full.height / 2, 1);
        std::size_t best = 0;
        CropRect best_rect{0, 0, full.width, full.height};
        for (int qy = 0; qy < 2; ++qy) {
            for (int qx = 0; qx < 2; ++qx) {
                CropRect rect{qx * hw, qy * hh, qx == 1 ? full.width : hw,
                              qy == 1 ? full.height : hh};
                std::size_t n = full.crop(rect.x0, rect.y0, rect.x1, rect.y1)
                                    .count(Raster::kContourMismatch);
                if (n > best) {
                    best = n;
                    best_rect = rect;
                }
            }
        }
        JudgeReply reply;
        reply.kind = JudgeReply::Kind::crop;
        reply.crop = best_rect;
        reply.raw_text = "CROP " + std::to_string(best_rect.x0) + " " +
                         std::to_string(best_rect.y0) + " " + std::to_string(best_rect.x1) + " " +
                         std::to_string(best_rect.y1);
        return reply;
    }

    double fraction = context.image.mismatch_fraction();
    JudgeReply reply;
    reply.kind = JudgeReply::Kind::verdict;
    if (fraction > threshold_) {
        reply.verdict.verdict = Verdict::rejected;
        std::ostringstream reason;
        reason << "contour mismatch covers " << static_cast<int>(fraction * 1000.0) / 10.0
               << "% of the montage (threshold " << static_cast<int>(threshold_ * 1000.0) / 10.0
               << "%)";
        reply.verdict.reject_reason = reason.str();
    } else {
        reply.verdict.verdict = Verdict::acceptable;
    }
    reply.raw_text = json{{"verdict", verdict_to_string(reply.verdict.verdict)},
                          {"reject_reason", reply.verdict.reject_reason}}
                         .dump();
    return reply;
}

JudgeReply parse_judge_reply(const std::string& text) {
    JudgeReply reply;
    reply.raw_text = text;

    std::istringstream stream(text);
    std::string word;
    stream >> word;
    if (word == "CROP") {
        CropRect rect;
        if (stream >> rect.x0 >> rect.y0 >> rect.x1 >> rect.y1) {
            reply.kind = JudgeReply::Kind::crop;
            reply.crop = rect;
            return reply;
        }
        fail(Errc::malformed_judge_output, "bad crop request: " + text);
    }

    auto brace = text.find('{');
    if (brace != std::string::npos) {
        try {
            json record = json::parse(text.substr(brace));
            if (record.contains("verdict")) {
                std::string v = record.at("verdict").get<std::string>();
                if (v == "ACCEPTABLE") {
                    reply.kind = JudgeReply::Kind::verdict;
                    reply.verdict.verdict = Verdict::acceptable;
                    return reply;
                }
                if (v == "REJECTED") {
                    std::string reason;
                    if (record.contains("reject_reason") && record.at("reject_reason").is_string())
                        reason = record.at("reject_reason").get<std::string>();
                    if (reason.empty())
                        fail(Errc::malformed_judge_output, "REJECTED without reject_reason");
                    reply.kind = JudgeReply::Kind::verdict;
                    reply.verdict.verdict = Verdict::rejected;
                    reply.verdict.reject_reason = reason;
                    return reply;
                }
                fail(Errc::malformed_judge_output, "verdict must be ACCEPTABLE or REJECTED");
            }
        } catch (const json::exception&) {
            // fall through: plain text turn
        }
    }
    reply.kind = JudgeReply::Kind::text;
    return reply;
}

ElementVerdict visual_inspect(const VisualizationDescriptor& viz, Judge& judge,
                              const InspectionProtocol& protocol) {
    Raster view = viz.image;
    for (int turn = 1; turn <= protocol.max_turns; ++turn) {
        JudgeReply reply = judge.assess(view, viz, protocol, turn);
        switch (reply.kind) {
        case JudgeReply::Kind::verdict:
            if (reply.verdict.verdict == Verdict::rejected && reply.verdict.reject_reason.empty())
                fail(Errc::malformed_judge_output, "REJECTED without reject_reason");
            return reply.verdict;
        case JudgeReply::Kind::crop:
            view = view.crop(reply.crop.x0, reply.crop.y0, reply.crop.x1, reply.crop.y1);
            break;
        case JudgeReply::Kind::text:
            break; // observation turn, no verdict yet
        }
    }
    fail(Errc::turn_limit_without_verdict,
         "no verdict after " + std::to_string(protocol.max_turns) + " turns");
}

} // namespace nexus
