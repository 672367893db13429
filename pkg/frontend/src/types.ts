// Response shapes of the map service. Field names mirror the JSON payloads
// exactly; nothing here is computed client-side.

export interface MapMeta {
  width: number;
  height: number;
  resolution: number;
  origin_x: number;
  origin_y: number;
  scale: number;
  image_width: number;
  image_height: number;
}

export interface GraphNode {
  id: number;
  x: number;
  y: number;
  kind: string;
}

export interface GraphEdge {
  a: number;
  b: number;
  length: number;
}

export interface GraphBinding {
  product_id: string;
  edge: [number, number];
  px: number;
  py: number;
  side: string;
  offset: number;
  visible: boolean;
}

export interface TopologyDoc {
  nodes: GraphNode[];
  edges: GraphEdge[];
  bindings: GraphBinding[];
}

export interface ProductLabel {
  name: string;
  brand: string;
  packaging_type?: string;
  category: string;
}

export interface ProductEntry {
  product_id: string;
  label: ProductLabel;
  world_x: number;
  world_y: number;
  refined: boolean;
  frame_id: number;
  sharpness: number;
}

export interface ZoneAnchor {
  zone: string;
  x: number;
  y: number;
}

export interface ZonesDoc {
  schema_version: number;
  zones: string[];
  anchors: ZoneAnchor[];
  product_zones: Record<string, number>;
}

export interface SearchMatch {
  tier: string;
  zone: string | null;
  target: { x: number; y: number } | null;
  product_id: string | null;
  label: ProductLabel | null;
  reason: string;
}

export interface SearchSubGoal {
  query: string;
  resolved: boolean;
  matches: SearchMatch[];
}

export interface SearchPlan {
  schema_version: number;
  query: string;
  degraded: boolean;
  sub_goals: SearchSubGoal[];
}

export interface RouteLandmark {
  category: string;
  side: string;
  along_m: number;
  segment_index: number;
}

export interface RouteSegment {
  kind: string;
  distance?: number;
  direction?: string;
  angle?: number;
}

export interface RouteDoc {
  schema_version: number;
  nodes: { id: number; x: number; y: number }[];
  total_length: number;
  segments: RouteSegment[];
  landmarks: RouteLandmark[];
  instructions: string[];
  prompt_payload: unknown;
  goal_side: string | null;
}

export interface PoseOut {
  rank: number;
  score: number;
  x: number;
  y: number;
  heading: number;
}

export interface LocalizeResponse {
  k: number;
  hypotheses: PoseOut[];
}

export interface LabelIn {
  name: string;
  brand?: string;
  category?: string;
}
