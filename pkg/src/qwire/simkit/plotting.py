"""Figures rendered next to a run's reports (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_modes(modes: dict, path: Path) -> Path:
    names = list(modes["modes"])
    cars = [modes["modes"][n]["car_db"] for n in names]
    anchors = [modes["modes"][n]["anchor_db"] for n in names]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = range(len(names))
    ax.bar(x, cars, color="tab:blue", label="model")
    ax.scatter(x, anchors, color="k", marker="_", s=400, label="anchor", zorder=3)
    ax.set_xticks(list(x), names)
    ax.set_ylabel("CAR (dB)")
    ax.set_title(f"Header modes at {modes['launch_dbm']} dBm launch")
    ax.legend()
    return _save(fig, path)


def plot_sweep(sweep: dict, path: Path) -> Path:
    pts = sweep["points"]
    att = [p["attenuation_db"] for p in pts]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.semilogy(att, [max(p["header_ber"], 1e-15) for p in pts], "o-", color="tab:red")
    ax1.set_xlabel("channel attenuation (dB)")
    ax1.set_ylabel("header BER", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(att, [p["car_db"] for p in pts], "s-", color="tab:blue")
    ax2.set_ylabel("CAR (dB)", color="tab:blue")
    ax1.set_title(f"BER and CAR vs attenuation, {sweep['launch_dbm']} dBm, {sweep['header_mode']}")
    return _save(fig, path)


def plot_dispersion(disp: dict, path: Path) -> Path:
    pts = disp["points"]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([p["length_km"] for p in pts], [p["car_db"] for p in pts], "o-")
    for p in pts:
        ax.annotate(f"capture {p['capture_fraction']:.2f}", (p["length_km"], p["car_db"]),
                    textcoords="offset points", xytext=(5, 5), fontsize=8)
    ax.set_xlabel("fibre length (km)")
    ax.set_ylabel("CAR (dB)")
    ax.set_title(f"Dispersion, {disp['header_mode']} headers")
    return _save(fig, path)


def plot_link_series(link_id: str, link: dict, alarms: list, path: Path) -> Path:
    tele = [s for s in link["series"] if s["kind"] == "telemetry"]
    probes = [s for s in link["series"] if s["kind"] == "probe"]
    fig, axes = plt.subplots(3, 1, figsize=(7, 6), sharex=True)
    t = [s["t_ns"] / 1e9 for s in tele]
    axes[0].plot(t, [s["ber"] for s in tele], ".-")
    axes[0].set_ylabel("header BER")
    car = [(s["t_ns"] / 1e9, s["car_db"], s["car_lower_db"]) for s in tele if s["car_db"] is not None]
    if car:
        axes[1].plot([c[0] for c in car], [c[1] for c in car], ".-", label="inferred")
        axes[1].plot([c[0] for c in car], [c[2] for c in car], "--", label="band lower")
        axes[1].legend(fontsize=8)
    axes[1].set_ylabel("CAR (dB)")
    axes[2].semilogy([p["t_ns"] / 1e9 for p in probes], [max(p["noise_photon_rate_hz"], 1.0) for p in probes], "o")
    axes[2].set_ylabel("probe noise (1/s)")
    axes[2].set_xlabel("time (s)")
    for a in alarms:
        if a["link_id"] == link_id:
            for ax in axes:
                ax.axvline(a["t_ns"] / 1e9, color="tab:red", alpha=0.5)
    axes[0].set_title(f"link {link_id}")
    return _save(fig, path)


def render_figures(report: dict, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    paths = []
    a = report["analyses"]
    if "modes" in a:
        paths.append(plot_modes(a["modes"], out / "modes.png"))
    if "sweep" in a:
        paths.append(plot_sweep(a["sweep"], out / "sweep.png"))
    if "dispersion" in a:
        paths.append(plot_dispersion(a["dispersion"], out / "dispersion.png"))
    for link_id, link in report["links"].items():
        if link["series"]:
            paths.append(plot_link_series(link_id, link, report["alarms"], out / f"link_{link_id}.png"))
    return paths
