#pragma once

#include "nexus/qc.hpp"
#include "nexus/voxel.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nexus {

/// Rendered 2D inspection image. Pixels are semantic codes rather than
/// intensities: enough for a deterministic judge and tiny to store.
struct Raster {
    static constexpr std::uint8_t kBackground = 0;
    static constexpr std::uint8_t kTissue = 1;
    static constexpr std::uint8_t kContourMatch = 2;
    static constexpr std::uint8_t kContourMismatch = 3;

    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> codes;

    std::uint8_t at(int x, int y) const { return codes[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t& at(int x, int y) { return codes[static_cast<std::size_t>(y) * width + x]; }

    /// Half-open crop clamped to bounds.
    Raster crop(int x0, int y0, int x1, int y1) const;

    std::size_t count(std::uint8_t code) const;
    /// Mismatch-coded pixels as a fraction of the whole raster.
    double mismatch_fraction() const;
};

/// Montage kinds, one per checkpoint type.
enum class VizKind {
    raw_mosaic,
    mask_contour_montage,
    segmentation_contour_montage,
    template_contour_montage,
};

VizKind viz_kind_from_string(const std::string& text);
const char* viz_kind_to_string(VizKind kind);

struct VisualizationDescriptor {
    std::string subject;
    std::string step;
    VizKind kind = VizKind::raw_mosaic;
    Raster image;
};

/// Renders a 3x3-style montage (three orthogonal mid-slices per axis) of the
/// base image. For contour kinds, overlays the boundary of `mask` against the
/// boundary of `reference_mask`: where they coincide the pixel is coded as a
/// matching contour, where only one is present it is coded as a mismatch.
Raster render_montage(const VoxelGrid& base, const VoxelGrid* mask,
                      const VoxelGrid* reference_mask, VizKind kind);

VisualizationDescriptor make_visualization(const std::string& subject, const std::string& step,
                                           VizKind kind, const VoxelGrid& base,
                                           const VoxelGrid* mask = nullptr,
                                           const VoxelGrid* reference_mask = nullptr);

struct CropRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

/// One judge turn: either a crop request or a final verdict.
struct JudgeReply {
    enum class Kind { crop, verdict, text };
    Kind kind = Kind::text;
    CropRect crop;
    ElementVerdict verdict;
    std::string raw_text;
};

struct InspectionProtocol {
    std::string criteria;
    std::vector<std::string> exemplars;
    int max_turns = 5;
};

/// Visual judge interface. `view` is the current (possibly cropped) raster.
class Judge {
public:
    virtual ~Judge() = default;
    virtual JudgeReply assess(const Raster& view, const VisualizationDescriptor& context,
                              const InspectionProtocol& protocol, int turn) = 0;
};

/// Deterministic stand-in for the vision model: zooms into the worst quadrant
/// once (when turns allow), then rejects iff the full montage's mismatch
/// fraction exceeds the threshold.
class StubJudge final : public Judge {
public:
    explicit StubJudge(double mismatch_threshold = 0.05) : threshold_(mismatch_threshold) {}

    JudgeReply assess(const Raster& view, const VisualizationDescriptor& context,
                      const InspectionProtocol& protocol, int turn) override;

private:
    double threshold_;
};

/// Parses a judge message: either "CROP x0 y0 x1 y1" or a JSON object with
/// "verdict" and optional "reject_reason". Anything else is plain text.
JudgeReply parse_judge_reply(const std::string& text);

/// Multi-turn inspection loop. The judge may crop up to max_turns-1 times;
/// a REJECTED verdict must carry a reason.
ElementVerdict visual_inspect(const VisualizationDescriptor& viz, Judge& judge,
                              const InspectionProtocol& protocol);

} // namespace nexus
