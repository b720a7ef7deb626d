// Minimal 3-D math for the 2.5-D view: a yaw/pitch camera at fixed height,
// cursor-to-ray mapping, and the inverse projection for drawing sprites.

import type { Vec3Tuple } from "./protocol.js";

export interface Vec3 {
  x: number;
  y: number;
  z: number;
}

export const EYE_HEIGHT = 1.6;
export const HFOV_DEG = 43;
export const VFOV_DEG = 29;
export const HEAD_LAG_TAU_MS = 300;

export function v3(x: number, y: number, z: number): Vec3 {
  return { x, y, z };
}

export function fromTuple(t: Vec3Tuple): Vec3 {
  return { x: t[0], y: t[1], z: t[2] };
}

export function toTuple(v: Vec3): Vec3Tuple {
  return [v.x, v.y, v.z];
}

export function sub(a: Vec3, b: Vec3): Vec3 {
  return { x: a.x - b.x, y: a.y - b.y, z: a.z - b.z };
}

export function norm(v: Vec3): number {
  return Math.hypot(v.x, v.y, v.z);
}

export function normalize(v: Vec3): Vec3 {
  const n = norm(v);
  if (n === 0) throw new Error("cannot normalize zero vector");
  return { x: v.x / n, y: v.y / n, z: v.z / n };
}

export function deg(rad: number): number {
  return (rad * 180) / Math.PI;
}

export function rad(degrees: number): number {
  return (degrees * Math.PI) / 180;
}

/** Camera orientation; yaw 0 looks along +z, pitch positive looks up. */
export interface Camera {
  yawDeg: number;
  pitchDeg: number;
}

/** World-space forward direction for a yaw/pitch pair. */
export function cameraForward(cam: Camera): Vec3 {
  const cy = Math.cos(rad(cam.yawDeg));
  const sy = Math.sin(rad(cam.yawDeg));
  const cp = Math.cos(rad(cam.pitchDeg));
  const sp = Math.sin(rad(cam.pitchDeg));
  return { x: sy * cp, y: sp, z: cy * cp };
}

/**
 * Maps a cursor position (canvas pixels) to angular offsets inside the
 * view, then to a world-space unit direction through the camera.
 */
export function cursorToDir(
  cam: Camera,
  px: number,
  py: number,
  width: number,
  height: number,
): Vec3 {
  const ax = ((px / width) * 2 - 1) * (HFOV_DEG / 2);
  const ay = (1 - (py / height) * 2) * (VFOV_DEG / 2);
  return cameraForward({ yawDeg: cam.yawDeg + ax, pitchDeg: cam.pitchDeg + ay });
}

export interface ScreenPoint {
  x: number;
  y: number;
  /** Distance from the camera apex in meters. */
  range: number;
}

/**
 * Projects a world point to canvas pixels by its angular offsets from the
 * camera axis (the inverse of cursorToDir). Returns null behind the view.
 */
export function projectPoint(
  cam: Camera,
  apex: Vec3,
  point: Vec3,
  width: number,
  height: number,
): ScreenPoint | null {
  const d = sub(point, apex);
  const range = norm(d);
  if (range === 0) return null;
  const horiz = Math.hypot(d.x, d.z);
  const yawDeg = deg(Math.atan2(d.x, d.z));
  const pitchDeg = deg(Math.atan2(d.y, horiz));
  let ax = yawDeg - cam.yawDeg;
  // Keep the wraparound seam behind the camera.
  while (ax > 180) ax -= 360;
  while (ax < -180) ax += 360;
  const ay = pitchDeg - cam.pitchDeg;
  if (Math.abs(ax) >= 90) return null;
  return {
    x: ((ax / (HFOV_DEG / 2) + 1) / 2) * width,
    y: ((1 - ay / (VFOV_DEG / 2)) / 2) * height,
    range,
  };
}

/**
 * First-order lag of the camera toward a target orientation, the same
 * time constant the simulated head uses.
 */
export function lagCamera(cam: Camera, target: Camera, dtMs: number): Camera {
  const k = 1 - Math.exp(-dtMs / HEAD_LAG_TAU_MS);
  let dyaw = target.yawDeg - cam.yawDeg;
  while (dyaw > 180) dyaw -= 360;
  while (dyaw < -180) dyaw += 360;
  return {
    yawDeg: cam.yawDeg + dyaw * k,
    pitchDeg: cam.pitchDeg + (target.pitchDeg - cam.pitchDeg) * k,
  };
}

/** Angular distance between two unit directions, in degrees. */
export function angularDistanceDeg(a: Vec3, b: Vec3): number {
  const dot = a.x * b.x + a.y * b.y + a.z * b.z;
  return deg(Math.acos(Math.min(1, Math.max(-1, dot))));
}
