#pragma once

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <string>

#include <Eigen/Dense>

#include "calib/core.hpp"
#include "calib/csv.hpp"
#include "calib/errors.hpp"

namespace calib {

// Line-oriented subprocess protocol: the child receives one line
// "x1 ... xd theta1 ... thetap" on stdin and must print one finite scalar.
struct SubprocessSpec {
    std::string command;      // run via /bin/sh -c
    double timeout_s = 30.0;  // kill the child past this
};

namespace detail {

inline std::string read_all_with_timeout(int fd, pid_t pid, double timeout_s, bool& timed_out) {
    std::string out;
    char buf[4096];
    timed_out = false;
    for (;;) {
        pollfd pfd{fd, POLLIN, 0};
        int rc = ::poll(&pfd, 1, static_cast<int>(timeout_s * 1000));
        if (rc == 0) {
            timed_out = true;
            ::kill(pid, SIGKILL);
            return out;
        }
        ssize_t n = ::read(fd, buf, sizeof(buf));
        if (n < 0) {
            if (errno == EINTR) continue;
            return out;
        }
        if (n == 0) return out;
        out.append(buf, static_cast<size_t>(n));
    }
}

}  // namespace detail

inline double external_code_bridge(const SubprocessSpec& spec, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& theta) {
    if (spec.command.empty()) throw config_error("empty subprocess command");

    std::string line;
    for (Eigen::Index i = 0; i < x.size(); ++i) line += format_double(x(i)) + " ";
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        line += format_double(theta(i));
        line += (i + 1 < theta.size()) ? " " : "";
    }
    line += "\n";

    int in_pipe[2], out_pipe[2];
    if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0)
        throw simulator_error("pipe creation failed");

    pid_t pid = ::fork();
    if (pid < 0) throw simulator_error("fork failed");
    if (pid == 0) {
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        ::execl("/bin/sh", "sh", "-c", spec.command.c_str(), (char*)nullptr);
        _exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);

    // Child may exit without reading; ignore EPIPE on the write side.
    signal(SIGPIPE, SIG_IGN);
    ssize_t written = ::write(in_pipe[1], line.data(), line.size());
    (void)written;
    ::close(in_pipe[1]);

    bool timed_out = false;
    std::string output = detail::read_all_with_timeout(out_pipe[0], pid, spec.timeout_s, timed_out);
    ::close(out_pipe[0]);

    int status = 0;
    ::waitpid(pid, &status, 0);

    if (timed_out)
        throw simulator_error("simulator timed out: " + spec.command, output);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
        throw simulator_error("simulator exited with status " +
                                  std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1),
                              output);
    try {
        size_t pos = output.find_first_not_of(" \t\r\n");
        if (pos == std::string::npos) throw config_error("empty");
        size_t end = output.find_first_of(" \t\r\n", pos);
        double v = parse_double(output.substr(pos, end - pos));
        if (!std::isfinite(v)) throw config_error("non-finite");
        return v;
    } catch (const config_error&) {
        throw simulator_error("unparseable simulator output", output);
    }
}

inline SimulatorCode subprocess_simulator(SubprocessSpec spec, int p) {
    return SimulatorCode{
        [spec = std::move(spec)](const Eigen::VectorXd& x, const Eigen::VectorXd& theta) {
            return external_code_bridge(spec, x, theta);
        },
        p};
}

}  // namespace calib
