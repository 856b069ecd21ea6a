# src/android_components.py
from enum import Enum
from typing import Dict, Iterable, Mapping, Optional, Tuple

from src.errors import ComponentDetectionError, ConfigError
from src.smali_ir import ProbeKind, SmaliClass, SmaliMethod, is_class_descriptor
from src.utils.log import log


class ComponentKind(str, Enum):
    ACTIVITY = "Activity"
    SERVICE = "Service"
    BROADCAST_RECEIVER = "BroadcastReceiver"
    CONTENT_PROVIDER = "ContentProvider"

    @property
    def probe_kind(self) -> ProbeKind:
        return _PROBE_KINDS[self]

    @property
    def lifecycle_methods(self) -> Tuple[str, ...]:
        return LIFECYCLE_METHODS[self]

    @classmethod
    def parse(cls, name: str) -> "ComponentKind":
        normalized = name.strip().replace("_", "").lower()
        for kind in cls:
            if kind.value.lower() == normalized or kind.name.replace("_", "").lower() == normalized:
                return kind
        raise ConfigError(f"Unknown component kind: {name!r}")


_PROBE_KINDS = {
    ComponentKind.ACTIVITY: ProbeKind.ACTIVITY,
    ComponentKind.SERVICE: ProbeKind.SERVICE,
    ComponentKind.BROADCAST_RECEIVER: ProbeKind.RECEIVER,
    ComponentKind.CONTENT_PROVIDER: ProbeKind.PROVIDER,
}

LIFECYCLE_METHODS: Dict[ComponentKind, Tuple[str, ...]] = {
    ComponentKind.ACTIVITY: ("onCreate", "onStart", "onResume", "onPause", "onStop", "onRestart", "onDestroy"),
    ComponentKind.SERVICE: ("onCreate", "onStartCommand", "onBind", "onDestroy"),
    ComponentKind.BROADCAST_RECEIVER: ("onReceive",),
    ComponentKind.CONTENT_PROVIDER: ("onCreate", "query", "insert", "update", "delete"),
}

# Framework bases plus the support/appcompat classes apps commonly extend.
DEFAULT_COMPONENT_BASES: Dict[str, ComponentKind] = {
    "Landroid/app/Activity;": ComponentKind.ACTIVITY,
    "Landroid/app/ListActivity;": ComponentKind.ACTIVITY,
    "Landroid/app/NativeActivity;": ComponentKind.ACTIVITY,
    "Landroid/app/TabActivity;": ComponentKind.ACTIVITY,
    "Landroid/preference/PreferenceActivity;": ComponentKind.ACTIVITY,
    "Landroidx/activity/ComponentActivity;": ComponentKind.ACTIVITY,
    "Landroidx/core/app/ComponentActivity;": ComponentKind.ACTIVITY,
    "Landroidx/fragment/app/FragmentActivity;": ComponentKind.ACTIVITY,
    "Landroidx/appcompat/app/AppCompatActivity;": ComponentKind.ACTIVITY,
    "Landroid/support/v4/app/FragmentActivity;": ComponentKind.ACTIVITY,
    "Landroid/support/v7/app/AppCompatActivity;": ComponentKind.ACTIVITY,
    "Landroid/app/Service;": ComponentKind.SERVICE,
    "Landroid/app/IntentService;": ComponentKind.SERVICE,
    "Landroid/app/job/JobService;": ComponentKind.SERVICE,
    "Landroidx/lifecycle/LifecycleService;": ComponentKind.SERVICE,
    "Landroidx/core/app/JobIntentService;": ComponentKind.SERVICE,
    "Landroid/content/BroadcastReceiver;": ComponentKind.BROADCAST_RECEIVER,
    "Landroid/appwidget/AppWidgetProvider;": ComponentKind.BROADCAST_RECEIVER,
    "Landroidx/legacy/content/WakefulBroadcastReceiver;": ComponentKind.BROADCAST_RECEIVER,
    "Landroid/content/ContentProvider;": ComponentKind.CONTENT_PROVIDER,
    "Landroidx/core/content/FileProvider;": ComponentKind.CONTENT_PROVIDER,
}


def parse_component_bases(raw: Optional[Mapping[str, str]]) -> Dict[str, ComponentKind]:
    """Default base list extended (or overridden per descriptor) by config entries `descriptor: kind name`."""
    bases: Dict[str, ComponentKind] = dict(DEFAULT_COMPONENT_BASES)
    for descriptor, kind_name in (raw or {}).items():
        if not is_class_descriptor(str(descriptor)):
            raise ConfigError(f"Invalid component base descriptor: {descriptor!r}")
        bases[str(descriptor)] = ComponentKind.parse(str(kind_name))
    return bases


def detect_component_kind(cls: SmaliClass, class_table: Mapping[str, SmaliClass],
                          base_list: Mapping[str, ComponentKind]) -> Optional[ComponentKind]:
    """
    Walks the superclass chain through app classes until it reaches a
    configured base (component) or a superclass the app does not define (none).
    """
    visited = {cls.descriptor}
    current = cls.super_descriptor
    while current is not None:
        if current in base_list:
            return base_list[current]
        parent = class_table.get(current)
        if parent is None:
            return None
        if current in visited:
            raise ComponentDetectionError(
                f"Cyclic superclass chain detected from {cls.descriptor} at {current}")
        visited.add(current)
        current = parent.super_descriptor
    return None


def lifecycle_methods_of(cls: SmaliClass, kind: ComponentKind) -> Tuple[SmaliMethod, ...]:
    """Instance methods of `cls` named like one of the kind's lifecycle callbacks, in class order."""
    names = set(kind.lifecycle_methods)
    return tuple(m for m in cls.methods if m.name in names and not m.is_static)


def detect_components(classes: Iterable[SmaliClass], class_table: Mapping[str, SmaliClass],
                      base_list: Mapping[str, ComponentKind]) -> Dict[str, ComponentKind]:
    found: Dict[str, ComponentKind] = {}
    for cls in classes:
        if cls.is_interface:
            continue
        kind = detect_component_kind(cls, class_table, base_list)
        if kind is not None:
            found[cls.descriptor] = kind
    log(f"Detected {len(found)} Android components.", "DEBUG")
    return found
