import functools
import importlib.util
import logging
import os
from pathlib import Path

from errors import ContractViolation

logger = logging.getLogger(__name__)

PLUGINS_DIR = Path(__file__).resolve().parent / "plugins"
REQUIRED_KEYS = {"name", "transform", "needs_subspace", "batch_statistic"}


class InterventionRegistry:
    def __init__(self, plugins_dir=None):
        """
        Discover intervention plugins (intervention_*.py files exposing register()).
        """
        self.plugins_dir = Path(plugins_dir) if plugins_dir else PLUGINS_DIR
        self.registry = {}

        logger.debug(f"📂 Looking for intervention plugins in: {self.plugins_dir}")
        self.load_plugins()

    def load_plugins(self):
        if not self.plugins_dir.exists():
            logger.warning(f"⚠️ Plugins directory not found: {self.plugins_dir}")
            return

        self.registry.clear()
        for filename in sorted(os.listdir(self.plugins_dir)):
            if filename.endswith(".py") and filename.startswith("intervention_"):
                self._load_single_plugin(filename)

        logger.debug(f"✅ {len(self.registry)} intervention kinds loaded.")

    def _load_single_plugin(self, filename):
        module_path = self.plugins_dir / filename
        module_name = module_path.stem

        try:
            spec = importlib.util.spec_from_file_location(module_name, module_path)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)

            if not hasattr(module, "register"):
                logger.error(f"❌ {module_name} missing register(). Skipping...")
                return

            metadata = module.register()
            if not REQUIRED_KEYS.issubset(metadata.keys()):
                logger.error(f"❌ {module_name} returned incomplete data: {sorted(metadata)}")
                return

            self.registry[metadata["name"]] = {
                "transform": metadata["transform"],
                "needs_subspace": bool(metadata["needs_subspace"]),
                "batch_statistic": bool(metadata["batch_statistic"]),
                "needs_sources": bool(metadata.get("needs_sources", False)),
                "provenance": metadata.get("provenance"),
            }
            logger.debug(f"✅ Intervention registered: {metadata['name']}")

        except Exception as e:
            logger.error(f"❌ Failed to load intervention plugin '{module_name}': {e}")

    def reload(self):
        logger.info("🔄 Reloading intervention plugins...")
        self.load_plugins()
        logger.info(f"✅ Reload complete. {len(self.registry)} intervention kinds registered.")

    def get(self, name):
        if name not in self.registry:
            raise ContractViolation(f"unknown intervention kind '{name}'", kind=name,
                                    known=",".join(sorted(self.registry)))
        return self.registry[name]

    def names(self):
        return sorted(self.registry)

    def __str__(self):
        if not self.registry:
            return "🚫 No interventions registered."
        lines = ["🚀 Loaded Interventions Summary:"]
        for name, meta in sorted(self.registry.items()):
            lines.append(f"- {name}: subspace={meta['needs_subspace']}, batch={meta['batch_statistic']}, "
                         f"sources={meta['needs_sources']}")
        return "\n".join(lines)


@functools.lru_cache(maxsize=1)
def default_registry():
    return InterventionRegistry()
