import logging
from typing import Callable, Optional

logger = logging.getLogger(__name__)


class ProgressTracker:
    """Track step progress and latest loss for several training or evaluation runs"""

    def __init__(self):
        self.progress = {}
        logger.info("[ProgressTracker.__init__] - Progress tracker initialized")

    def get_hook(self, run_id: str, callback: Optional[Callable] = None):
        """Get a progress hook for one run.

        The hook takes ``{"status", "step", "total"}`` plus optional ``"loss"``;
        updates that move backwards are dropped unless the run has finished.
        """
        logger.debug(f"[ProgressTracker.get_hook] - Creating hook for run: {run_id}")

        def progress_hook(d):
            status = d["status"]
            total = max(int(d.get("total", 0)), 1)
            percent = min(100.0 * int(d.get("step", 0)) / total, 100.0)

            if run_id not in self.progress:
                self.progress[run_id] = {"last_percent": 0.0, "reported_finished": False}
                logger.debug(f"[ProgressTracker.progress_hook] - Initialized tracking for: {run_id}")

            last_percent = self.progress[run_id]["last_percent"]
            if percent < last_percent and status != "finished":
                return
            self.progress[run_id]["last_percent"] = max(last_percent, percent)

            progress_data = {
                "id": run_id,
                "status": status,
                "percent": 100.0 if status == "finished" else float(f"{percent:.1f}"),
                "step": int(d.get("step", 0)),
                "total": total,
                "loss": d.get("loss"),
            }
            logger.debug(
                f"[ProgressTracker.progress_hook] - {run_id}: {progress_data['percent']:.1f}% ({status})"
            )

            if status == "finished" and not self.progress[run_id]["reported_finished"]:
                self.progress[run_id]["reported_finished"] = True
                logger.info(f"[ProgressTracker.progress_hook] - Run completed: {run_id}")

            if callback:
                callback(progress_data)

        return progress_hook
