// Wire enumerations and class definitions shared across screens.
// The verdict strings are exactly the API contract; the class labels are
// exactly the strings the evaluation reports emit.

export type WireVerdict = 'damage' | 'no_damage' | 'dont_know';
export type WireSeverity = 'severe' | 'mild';
export type MachineDamage = 'severe' | 'mild' | 'none';

export const WIRE_VERDICTS: readonly WireVerdict[] = ['damage', 'no_damage', 'dont_know'];
export const WIRE_SEVERITIES: readonly WireSeverity[] = ['severe', 'mild'];

export const SEVERITY_CLASS_LABELS = ['Severe Damage', 'Mild Damage', 'None'] as const;
export const DETECTION_CLASS_LABELS = ['Damage', 'No Damage'] as const;

export interface ClassDefinition {
  label: (typeof SEVERITY_CLASS_LABELS)[number];
  definition: string;
  examples: string;
}

export const CLASS_DEFINITIONS: readonly ClassDefinition[] = [
  {
    label: 'Severe Damage',
    definition:
      'Scenes showing fully destroyed houses, buildings, bridges, roads or other infrastructure.',
    examples:
      'Collapsed buildings, washed-out bridges, neighbourhoods levelled by wind or surge.',
  },
  {
    label: 'Mild Damage',
    definition:
      'Partially destroyed scenes of houses, buildings, or transportation infrastructure.',
    examples:
      'Missing roof sections, downed trees on structures, partially flooded streets with intact buildings.',
  },
  {
    label: 'None',
    definition: 'No visible damage content, even if the scene relates to the event.',
    examples: 'Forecast maps, press conferences, rescue staging areas, calm streets.',
  },
];

export const PRIMARY_OPTION_TEXT: Record<WireVerdict, string> = {
  damage: 'Damage',
  no_damage: 'No Damage',
  dont_know: "Don't know or can't judge",
};

export const SEVERITY_OPTION_TEXT: Record<WireSeverity, string> = {
  mild: 'Mild',
  severe: 'Severe',
};
