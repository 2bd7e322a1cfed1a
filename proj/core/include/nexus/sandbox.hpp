#pragma once

#include "nexus/jit.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace nexus {

/// Per-episode working tree. Every write during execution must resolve under
/// `root`; the standard subdirectories are created eagerly.
struct WorkspaceLayout {
    std::filesystem::path root;

    static WorkspaceLayout create(const std::filesystem::path& root);

    std::filesystem::path scripts_dir() const { return root / "scripts"; }
    std::filesystem::path logs_dir() const { return root / "logs"; }
    std::filesystem::path slurm_outputs_dir() const { return root / "slurm_outputs"; }
    std::filesystem::path derivatives_dir() const { return root / "derivatives"; }
    std::filesystem::path models_dir() const { return root / "models"; }

    /// True when `path` (resolved lexically against root) stays under root.
    bool contains(const std::filesystem::path& path) const;

    /// Resolves a workspace-relative path, rejecting escapes.
    std::filesystem::path resolve(const std::string& relative) const;
};

/// An executable program synthesized by an agent, composed over selected
/// primitives. Programs run under /bin/sh with the workspace as cwd.
struct Program {
    std::string source;
    std::set<std::string> declared_primitives;
    enum class EntryKind { single_run, per_subject };
    EntryKind entry_kind = EntryKind::single_run;
    std::string pipeline_label;
};

/// Checks that every declared primitive was actually selected for the issuing
/// instruction and that the source is non-empty.
Program validate_program(Program program, const SelectionResult& selection);

struct ExecLimits {
    double wall_seconds = 600.0;
    std::size_t output_bytes = 1u << 20;
};

struct ExecutionRecord {
    int exit_status = 0;
    std::filesystem::path stdout_log;
    double duration_seconds = 0;
    std::vector<std::string> produced_paths; // workspace-relative, sorted
    bool truncated = false;
    std::vector<std::string> workspace_violations; // suspicious outside-root paths
    std::string failure_note; // set when a job-array worker hit Timeout etc.
};

/// Runs a shell command with cwd = workspace root, stdout+stderr captured to
/// `log_path`. A nonzero exit is an observation, not an error; Timeout and
/// OutputOverflow kill the process group and throw.
ExecutionRecord run_command(const std::string& command, const WorkspaceLayout& workspace,
                            const ExecLimits& limits, const std::filesystem::path& log_path,
                            bool track_produced = true);

/// Writes the program under scripts/ and executes it. The returned record
/// lists files created under the workspace during the run.
ExecutionRecord execute_program(const Program& program, const WorkspaceLayout& workspace,
                                const ExecLimits& limits,
                                const std::string& script_name = "program.sh");

/// Scans program text for path literals that escape the workspace (absolute
/// paths outside root, or ../ escapes). System prefixes are ignored.
std::vector<std::string> scan_workspace_violations(const std::string& source,
                                                   const WorkspaceLayout& workspace);

struct JobArraySpec {
    std::filesystem::path subjects_file; // one id per line
    std::string per_subject_command;     // {subject} placeholder
    int max_parallel = 4;
    std::filesystem::path log_dir;
    std::filesystem::path slurm_output_dir; // defaults to log_dir when empty
    std::string job_name = "job";
    // opaque cluster parameters, emitted only when set
    std::string cpus_per_task;
    std::string mem;
    std::string partition;
    std::string gres;
};

enum class Executor { local_pool, slurm };

struct JobArrayResult {
    std::vector<ExecutionRecord> records; // one per subject, input order
    std::vector<std::string> subjects;
    int high_water_concurrency = 0;
};

/// Runs one job per subject with at most max_parallel in flight, each logging
/// to `<log_dir>/<subject>.log`; returns only after every job finished. The
/// slurm executor renders the sbatch template and invokes `sbatch --wait`.
JobArrayResult dispatch_job_array(const JobArraySpec& spec, const WorkspaceLayout& workspace,
                                  Executor executor, const ExecLimits& per_job_limits);

std::vector<std::string> read_subjects_file(const std::filesystem::path& path);

/// sbatch array script matching the shipped job template (per-subject logs
/// redirected to `<log_dir>/<subject>.log`, subject ids taken line-by-line).
std::string render_sbatch_script(const JobArraySpec& spec, std::size_t n_subjects);

/// For each subject, the rendered `{subject}` patterns that do not exist under
/// the workspace; complete subjects map to empty lists.
std::map<std::string, std::vector<std::string>>
check_derivatives(const std::vector<std::string>& expected_patterns,
                  const std::vector<std::string>& subjects, const WorkspaceLayout& workspace);

/// Deterministic seeded sample of n subjects, returned in original list order.
std::vector<std::string> sample_subjects(const std::vector<std::string>& subjects, std::size_t n,
                                         std::uint64_t seed);

/// {placeholder} substitution for primitive command templates.
std::string render_template(const std::string& templ,
                            const std::map<std::string, std::string>& values);

} // namespace nexus
