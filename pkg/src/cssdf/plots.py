"""SVG plot emitters for training curves, latency scaling, fields, and episodes."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .robot import RobotModel, batch_sphere_centers  # noqa: E402


def emit_loss_curves(history: list, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [row["epoch"] for row in history]
    ax.plot(epochs, [row["train_loss"] for row in history], label="train")
    ax.plot(epochs, [row["val_loss"] for row in history], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("composite loss")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def emit_latency(rows: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for mode, vals in rows.items():
        scales = sorted(vals)
        ax.plot(scales, [vals[s] for s in scales], marker="o", label=mode)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("query scale (points)")
    ax.set_ylabel("median latency (ms)")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def emit_cspace_field(grid_values: np.ndarray, bounds: np.ndarray, path, title="") -> None:
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(
        grid_values.T,
        origin="lower",
        extent=[bounds[0, 0], bounds[0, 1], bounds[1, 0], bounds[1, 1]],
        cmap="RdBu",
        vmin=-np.max(np.abs(grid_values)),
        vmax=np.max(np.abs(grid_values)),
    )
    ax.contour(
        np.linspace(bounds[0, 0], bounds[0, 1], grid_values.shape[0]),
        np.linspace(bounds[1, 0], bounds[1, 1], grid_values.shape[1]),
        grid_values.T,
        levels=[0.0],
        colors="k",
    )
    fig.colorbar(im, ax=ax, label="signed distance (rad)")
    ax.set_xlabel("q1 (rad)")
    ax.set_ylabel("q2 (rad)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _draw_arm(ax, robot: RobotModel, q: np.ndarray, color="tab:blue", alpha=1.0):
    centers = batch_sphere_centers(robot, q[None, :])[0]
    ax.plot(centers[:, 0], centers[:, 1], "-", color=color, alpha=alpha, lw=2)
    for c, r in zip(centers, robot.sphere_radii):
        ax.add_patch(plt.Circle((c[0], c[1]), r, color=color, alpha=0.3 * alpha))


def emit_avoidance_snapshots(robot: RobotModel, log, scene, path, snapshots=4) -> None:
    """Workspace view of an MPC episode: arm poses, obstacle, end-effector path."""
    fig, axes = plt.subplots(1, snapshots, figsize=(4 * snapshots, 4))
    idxs = np.linspace(0, log.t.size - 1, snapshots).astype(int)
    ee = np.stack(
        [batch_sphere_centers(robot, log.q[i][None, :])[0][-1] for i in range(log.t.size)]
    )
    for ax, i in zip(np.atleast_1d(axes), idxs):
        t = log.t[i]
        for obs in scene.at(t).obstacles:
            if obs.kind == "disc":
                ax.add_patch(plt.Circle(obs.center, obs.radius, color="tab:red", alpha=0.5))
            else:
                ax.add_patch(
                    plt.Rectangle(
                        obs.center - obs.half_extents,
                        2 * obs.half_extents[0],
                        2 * obs.half_extents[1],
                        color="tab:red",
                        alpha=0.5,
                    )
                )
        ax.plot(ee[: i + 1, 0], ee[: i + 1, 1], "g-", alpha=0.7, lw=1)
        _draw_arm(ax, robot, log.q[i])
        ax.set_title(f"t = {t:.2f} s")
        ax.set_aspect("equal")
        lim = robot.reach() * 1.3
        ax.set_xlim(-lim, lim)
        ax.set_ylim(-lim, lim)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
