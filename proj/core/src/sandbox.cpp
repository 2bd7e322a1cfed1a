#include "nexus/sandbox.hpp"

#include "nexus/error.hpp"
#include "nexus/util.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace nexus {

WorkspaceLayout WorkspaceLayout::create(const fs::path& root) {
    WorkspaceLayout workspace;
    workspace.root = fs::absolute(root).lexically_normal();
    fs::create_directories(workspace.root);
    fs::create_directories(workspace.scripts_dir());
    fs::create_directories(workspace.logs_dir());
    fs::create_directories(workspace.slurm_outputs_dir());
    fs::create_directories(workspace.derivatives_dir());
    fs::create_directories(workspace.models_dir());
    return workspace;
}

bool WorkspaceLayout::contains(const fs::path& path) const {
    fs::path normal = (path.is_absolute() ? path : root / path).lexically_normal();
    auto rel = normal.lexically_relative(root);
    if (rel.empty())
        return false;
    return rel.native().rfind("..", 0) != 0 && rel != "..";
}

fs::path WorkspaceLayout::resolve(const std::string& relative) const {
    fs::path candidate = (root / relative).lexically_normal();
    if (!contains(candidate))
        fail(Errc::workspace_violation, "'" + relative + "' escapes the workspace");
    return candidate;
}

Program validate_program(Program program, const SelectionResult& selection) {
    if (program.source.empty())
        fail(Errc::empty_program, "program has no source");
    std::set<std::string> selected(selection.selected_names.begin(),
                                   selection.selected_names.end());
    for (const auto& name : program.declared_primitives) {
        if (!selected.count(name))
            fail(Errc::undeclared_primitive, "'" + name + "' was not selected for this instruction");
    }
    return program;
}

namespace {

std::vector<std::string> list_workspace_files(const WorkspaceLayout& workspace) {
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(workspace.root)) {
        if (entry.is_regular_file())
            files.push_back(entry.path().lexically_relative(workspace.root).generic_string());
    }
    std::sort(files.begin(), files.end());
    return files;
}

void append_marker(const fs::path& log_path, std::size_t limit) {
    std::ofstream out(log_path, std::ios::app);
    out << "\n[log truncated: output exceeded " << limit << " bytes]\n";
}

} // namespace

std::vector<std::string> scan_workspace_violations(const std::string& source,
                                                   const WorkspaceLayout& workspace) {
    static const char* kSystemPrefixes[] = {"/bin/", "/usr/", "/dev/", "/etc/",
                                            "/proc/", "/sys/", "/lib"};
    std::vector<std::string> violations;
    auto is_path_char = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '/' || c == '.' || c == '_' ||
               c == '-' || c == '{' || c == '}';
    };

    std::size_t i = 0;
    while (i < source.size()) {
        if (!is_path_char(source[i])) {
            ++i;
            continue;
        }
        std::size_t start = i;
        while (i < source.size() && is_path_char(source[i]))
            ++i;
        std::string token = source.substr(start, i - start);
        if (token.find('/') == std::string::npos)
            continue;
        if (token[0] == '/') {
            bool system = false;
            for (const char* prefix : kSystemPrefixes) {
                if (token.rfind(prefix, 0) == 0)
                    system = true;
            }
            if (!system && !workspace.contains(token))
                violations.push_back(token);
        } else if (token.rfind("..", 0) == 0 || token.find("/../") != std::string::npos) {
            if (!workspace.contains(workspace.root / token))
                violations.push_back(token);
        }
    }
    std::sort(violations.begin(), violations.end());
    violations.erase(std::unique(violations.begin(), violations.end()), violations.end());
    return violations;
}

ExecutionRecord run_command(const std::string& command, const WorkspaceLayout& workspace,
                            const ExecLimits& limits, const fs::path& log_path,
                            bool track_produced) {
    if (log_path.has_parent_path())
        fs::create_directories(log_path.parent_path());

    std::vector<std::string> before;
    if (track_produced)
        before = list_workspace_files(workspace);

    int log_fd = ::open(log_path.c_str(), O_CREAT | O_WRONLY | O_TRUNC, 0644);
    if (log_fd < 0)
        fail(Errc::spawn_failure, "cannot open log " + log_path.string());

    auto start = std::chrono::steady_clock::now();
    pid_t pid = ::fork();
    if (pid < 0) {
        ::close(log_fd);
        fail(Errc::spawn_failure, std::strerror(errno));
    }
    if (pid == 0) {
        ::setpgid(0, 0); // own process group so timeouts kill descendants too
        if (::chdir(workspace.root.c_str()) != 0)
            ::_exit(127);
        ::dup2(log_fd, STDOUT_FILENO);
        ::dup2(log_fd, STDERR_FILENO);
        ::close(log_fd);
        ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(log_fd);
    ::setpgid(pid, pid); // from the parent too, so the group exists before any kill

    const auto deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                      std::chrono::duration<double>(limits.wall_seconds));
    int status = 0;
    bool timed_out = false;
    bool overflowed = false;
    for (;;) {
        pid_t done = ::waitpid(pid, &status, WNOHANG);
        if (done == pid)
            break;
        if (done < 0)
            fail(Errc::spawn_failure, std::strerror(errno));
        std::error_code ec;
        auto size = fs::file_size(log_path, ec);
        if (!ec && size > limits.output_bytes) {
            overflowed = true;
            ::kill(-pid, SIGKILL);
            ::waitpid(pid, &status, 0);
            break;
        }
        if (std::chrono::steady_clock::now() >= deadline) {
            timed_out = true;
            ::kill(-pid, SIGKILL);
            ::waitpid(pid, &status, 0);
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    double duration =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    // clamp the log at the configured cap, with an explicit marker
    std::error_code ec;
    auto final_size = fs::file_size(log_path, ec);
    bool truncated = false;
    if (!ec && final_size > limits.output_bytes) {
        fs::resize_file(log_path, limits.output_bytes, ec);
        append_marker(log_path, limits.output_bytes);
        truncated = true;
    }

    if (timed_out)
        fail(Errc::timeout, "command exceeded " + std::to_string(limits.wall_seconds) +
                                "s; log at " + log_path.string());
    if (overflowed)
        fail(Errc::output_overflow, "command produced more than " +
                                        std::to_string(limits.output_bytes) + " bytes; log at " +
                                        log_path.string());

    ExecutionRecord record;
    record.exit_status = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    record.stdout_log = log_path;
    record.duration_seconds = duration;
    record.truncated = truncated;
    if (track_produced) {
        std::vector<std::string> after = list_workspace_files(workspace);
        std::set_difference(after.begin(), after.end(), before.begin(), before.end(),
                            std::back_inserter(record.produced_paths));
        // the log itself is bookkeeping, not a produced artifact
        std::string log_rel = log_path.lexically_relative(workspace.root).generic_string();
        std::erase(record.produced_paths, log_rel);
    }
    return record;
}

ExecutionRecord execute_program(const Program& program, const WorkspaceLayout& workspace,
                                const ExecLimits& limits, const std::string& script_name) {
    if (program.source.empty())
        fail(Errc::empty_program, "program has no source");
    fs::path script = workspace.scripts_dir() / script_name;
    write_text_file_atomic(script, program.source);
    fs::path log_path = workspace.logs_dir() / (script.stem().string() + ".log");
    ExecutionRecord record =
        run_command("sh " + script.lexically_relative(workspace.root).generic_string(), workspace,
                    limits, log_path);
    record.workspace_violations = scan_workspace_violations(program.source, workspace);
    std::string script_rel = script.lexically_relative(workspace.root).generic_string();
    std::erase(record.produced_paths, script_rel);
    return record;
}

std::vector<std::string> read_subjects_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        fail(Errc::subjects_file_missing, path.string());
    std::vector<std::string> subjects;
    std::set<std::string> seen;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        if (!seen.insert(line).second)
            fail(Errc::parse_error, "duplicate subject id '" + line + "' in " + path.string());
        subjects.push_back(line);
    }
    if (subjects.empty())
        fail(Errc::subjects_file_missing, path.string() + " lists no subjects");
    return subjects;
}

std::string render_template(const std::string& templ,
                            const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(templ.size());
    std::size_t i = 0;
    while (i < templ.size()) {
        if (templ[i] == '{') {
            auto end = templ.find('}', i);
            if (end != std::string::npos) {
                std::string key = templ.substr(i + 1, end - i - 1);
                auto it = values.find(key);
                if (it != values.end()) {
                    out += it->second;
                    i = end + 1;
                    continue;
                }
            }
        }
        out.push_back(templ[i]);
        ++i;
    }
    return out;
}

std::string render_sbatch_script(const JobArraySpec& spec, std::size_t n_subjects) {
    std::ostringstream out;
    out << "#!/bin/bash\n";
    out << "#SBATCH --job-name=" << spec.job_name << "\n";
    out << "#SBATCH --array=1-" << n_subjects << "\n";
    if (!spec.cpus_per_task.empty())
        out << "#SBATCH --cpus-per-task=" << spec.cpus_per_task << "\n";
    if (!spec.mem.empty())
        out << "#SBATCH --mem=" << spec.mem << "\n";
    if (!spec.gres.empty())
        out << "#SBATCH --gres=" << spec.gres << "\n";
    if (!spec.partition.empty())
        out << "#SBATCH --partition=" << spec.partition << "\n";
    const fs::path& slurm_out = spec.slurm_output_dir.empty() ? spec.log_dir : spec.slurm_output_dir;
    out << "#SBATCH --output=" << slurm_out.generic_string() << "/" << spec.job_name
        << "-%a.out\n";
    out << "\n";
    out << "SUBJECT_LIST=" << spec.subjects_file.generic_string() << "\n";
    out << "SUB_ID=$(sed -n \"${SLURM_ARRAY_TASK_ID}p\" \"$SUBJECT_LIST\")\n";
    out << "\n";
    out << "LOG_DIR=" << spec.log_dir.generic_string() << "\n";
    out << "mkdir -p \"$LOG_DIR\"\n";
    out << "\n";
    out << "exec >\"${LOG_DIR}/${SUB_ID}.log\" 2>&1\n";
    out << "\n";
    out << render_template(spec.per_subject_command, {{"subject", "${SUB_ID}"}}) << "\n";
    return out.str();
}

namespace {

bool sbatch_available() {
    const char* path_env = std::getenv("PATH");
    if (!path_env)
        return false;
    std::istringstream paths(path_env);
    std::string dir;
    while (std::getline(paths, dir, ':')) {
        if (dir.empty())
            continue;
        std::error_code ec;
        if (fs::exists(fs::path(dir) / "sbatch", ec))
            return true;
    }
    return false;
}

} // namespace

JobArrayResult dispatch_job_array(const JobArraySpec& spec, const WorkspaceLayout& workspace,
                                  Executor executor, const ExecLimits& per_job_limits) {
    JobArrayResult result;
    result.subjects = read_subjects_file(spec.subjects_file);
    fs::create_directories(spec.log_dir);

    if (executor == Executor::slurm) {
        if (!sbatch_available())
            fail(Errc::executor_unavailable, "sbatch not found on PATH");
        std::string script = render_sbatch_script(spec, result.subjects.size());
        fs::path script_path = workspace.slurm_outputs_dir() / (spec.job_name + ".sbatch");
        write_text_file_atomic(script_path, script);
        fs::path submit_log = workspace.slurm_outputs_dir() / (spec.job_name + "-submit.log");
        ExecutionRecord submit =
            run_command("sbatch --wait " + script_path.lexically_relative(workspace.root).generic_string(),
                        workspace, per_job_limits, submit_log, false);
        for (const auto& subject : result.subjects) {
            ExecutionRecord record;
            record.exit_status = submit.exit_status;
            record.stdout_log = spec.log_dir / (subject + ".log");
            record.duration_seconds = submit.duration_seconds;
            result.records.push_back(std::move(record));
        }
        return result;
    }

    const std::size_t n = result.subjects.size();
    result.records.resize(n);
    const int pool = std::max(1, std::min<int>(spec.max_parallel, static_cast<int>(n)));

    std::atomic<std::size_t> next{0};
    std::atomic<int> active{0};
    std::atomic<int> high_water{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;

    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n)
                return;
            int now_active = active.fetch_add(1) + 1;
            int seen = high_water.load();
            while (now_active > seen && !high_water.compare_exchange_weak(seen, now_active)) {
            }
            const std::string& subject = result.subjects[i];
            std::string command = render_template(spec.per_subject_command, {{"subject", subject}});
            fs::path log_path = spec.log_dir / (subject + ".log");
            try {
                // produced-path diffing is skipped per job: concurrent workers
                // would race the directory snapshot
                result.records[i] = run_command(command, workspace, per_job_limits, log_path, false);
            } catch (const Error& e) {
                ExecutionRecord record;
                record.exit_status = -1;
                record.stdout_log = log_path;
                record.failure_note = e.what();
                result.records[i] = std::move(record);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error)
                    first_error = std::current_exception();
            }
            active.fetch_sub(1);
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(pool));
    for (int t = 0; t < pool; ++t)
        threads.emplace_back(worker);
    for (auto& thread : threads)
        thread.join(); // full barrier: wait semantics
    if (first_error)
        std::rethrow_exception(first_error);

    result.high_water_concurrency = high_water.load();
    return result;
}

std::map<std::string, std::vector<std::string>>
check_derivatives(const std::vector<std::string>& expected_patterns,
                  const std::vector<std::string>& subjects, const WorkspaceLayout& workspace) {
    std::map<std::string, std::vector<std::string>> report;
    for (const auto& subject : subjects) {
        std::vector<std::string> missing;
        for (const auto& pattern : expected_patterns) {
            std::string rendered = render_template(pattern, {{"subject", subject}});
            fs::path candidate = rendered;
            if (!candidate.is_absolute())
                candidate = workspace.root / candidate;
            std::error_code ec;
            if (!fs::exists(candidate, ec))
                missing.push_back(rendered);
        }
        report[subject] = std::move(missing);
    }
    return report;
}

std::vector<std::string> sample_subjects(const std::vector<std::string>& subjects, std::size_t n,
                                         std::uint64_t seed) {
    if (n > subjects.size())
        fail(Errc::sample_too_large, std::to_string(n) + " > " + std::to_string(subjects.size()));
    // partial Fisher-Yates over indices, then restore original order
    std::vector<std::size_t> indices(subjects.size());
    for (std::size_t i = 0; i < indices.size(); ++i)
        indices[i] = i;
    SplitMix64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(indices.size() - i));
        std::swap(indices[i], indices[j]);
    }
    std::vector<std::size_t> chosen(indices.begin(), indices.begin() + static_cast<long>(n));
    std::sort(chosen.begin(), chosen.end());
    std::vector<std::string> sample;
    sample.reserve(n);
    for (std::size_t index : chosen)
        sample.push_back(subjects[index]);
    return sample;
}

} // namespace nexus
